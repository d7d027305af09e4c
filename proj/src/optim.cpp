#include "rulmdp/optim.hpp"

#include <cmath>

#include "rulmdp/errors.hpp"

namespace rulmdp {

void check_finite_grads(const ParamSet& params) {
  for (const auto& [name, p] : params)
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + name + "'");
}

void check_finite_values(const ParamSet& params, const std::string& context) {
  for (const auto& [name, p] : params)
    if (!p.value.all_finite()) throw NumericError(context + ": non-finite value in parameter '" + name + "'");
}

void adam_step(ParamSet& params, AdamState& state) {
  check_finite_grads(params);
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    auto [mit, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p.value));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p.value));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != p.value.shape()) throw ShapeError("Adam moment shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void sgd_step(ParamSet& params, double lr) {
  check_finite_grads(params);
  for (auto& [_, p] : params)
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
}

void soft_update(ParamSet& target, const ParamSet& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("soft update rate must lie in (0, 1]");
  if (!target.same_layout(online)) throw ShapeError("soft_update: parameter layouts differ");
  auto o = online.begin();
  for (auto t = target.begin(); t != target.end(); ++t, ++o) {
    Tensor& tv = t->second.value;
    const Tensor& ov = o->second.value;
    if (tau == 1.0) {
      tv = ov;
      continue;
    }
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = (1.0 - tau) * tv[i] + tau * ov[i];
  }
}

}  // namespace rulmdp
