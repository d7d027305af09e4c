#include "rulmdp/nn.hpp"

#include <cmath>

#include "rulmdp/errors.hpp"

namespace rulmdp {

Tensor init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

Tensor init_xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

Mlp::Mlp(std::vector<std::size_t> sizes, Rng& rng, const std::string& prefix)
    : sizes_(std::move(sizes)), prefix_(prefix) {
  if (sizes_.size() < 2) throw ValidationError("an MLP needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    params_.add(weight_name(l), init_uniform(sizes_[l], sizes_[l + 1], rng));
    Tensor b({1, sizes_[l + 1]});
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    for (auto& v : b.data()) v = rng.uniform(-bound, bound);
    params_.add(bias_name(l), std::move(b));
  }
}

std::string Mlp::weight_name(std::size_t layer) const { return prefix_ + "l" + std::to_string(layer) + ".weight"; }
std::string Mlp::bias_name(std::size_t layer) const { return prefix_ + "l" + std::to_string(layer) + ".bias"; }

Var Mlp::forward(Tape& tape, Var x) {
  const std::size_t n = sizes_.size() - 1;
  for (std::size_t l = 0; l < n; ++l) {
    x = add_bias(matmul(x, tape.param(params_.at(weight_name(l)))), tape.param(params_.at(bias_name(l))));
    if (l + 1 < n) x = relu(x);
  }
  return x;
}

Var Mlp::forward_const(Tape& tape, Var x) const {
  const std::size_t n = sizes_.size() - 1;
  for (std::size_t l = 0; l < n; ++l) {
    x = add_bias(matmul(x, tape.leaf(params_.at(weight_name(l)).value)),
                 tape.leaf(params_.at(bias_name(l)).value));
    if (l + 1 < n) x = relu(x);
  }
  return x;
}

Tensor Mlp::predict(const Tensor& x) const {
  Tape tape;
  return forward_const(tape, tape.leaf(x)).value();
}

}  // namespace rulmdp
