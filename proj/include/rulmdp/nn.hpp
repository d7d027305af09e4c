#pragma once

#include <string>
#include <vector>

#include "rulmdp/autodiff.hpp"
#include "rulmdp/rng.hpp"

namespace rulmdp {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
Tensor init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor init_xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Fully connected ReLU network; the final layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> sizes, Rng& rng, const std::string& prefix = "");

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  std::size_t in_dim() const { return sizes_.front(); }
  std::size_t out_dim() const { return sizes_.back(); }

  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  // Records the forward pass with parameters as gradient leaves.
  Var forward(Tape& tape, Var x);
  // Forward pass with parameters as constants (no gradient).
  Var forward_const(Tape& tape, Var x) const;
  Tensor predict(const Tensor& x) const;

 private:
  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;

  std::vector<std::size_t> sizes_;
  std::string prefix_;
  ParamSet params_;
};

}  // namespace rulmdp
