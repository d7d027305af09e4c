#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rulmdp/autodiff.hpp"

namespace rulmdp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// Bias-corrected Adam update from the gradients stored in `params`.
// Throws NumericError (and leaves params untouched) on a non-finite gradient.
void adam_step(ParamSet& params, AdamState& state);
void sgd_step(ParamSet& params, double lr);

// Throws NumericError naming the first parameter with a non-finite gradient.
void check_finite_grads(const ParamSet& params);
void check_finite_values(const ParamSet& params, const std::string& context);

// target <- (1 - tau) * target + tau * online
void soft_update(ParamSet& target, const ParamSet& online, double tau);

}  // namespace rulmdp
