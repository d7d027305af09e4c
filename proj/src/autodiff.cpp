#include "rulmdp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "rulmdp/errors.hpp"

namespace rulmdp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.ptr(), t.rows(), t.cols()); }
MapM view(Tensor& t) { return MapM(t.ptr(), t.rows(), t.cols()); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
  return a.tape();
}

// Adds g into the gradient of node `id` if that node wants one.
void accumulate(Tape& t, std::size_t id, const Tensor& g) {
  if (!t.requires_grad(id)) return;
  Tensor& dst = t.grad_mut(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename F>
Var unary(Var x, Tensor out, F local_grad) {
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.push(std::move(out), {xi}, [xi, local_grad](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    const Tensor& xv = tp.value(xi);
    const Tensor& yv = tp.value(self);
    Tensor& dx = tp.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * local_grad(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- ParamSet

Parameter& ParamSet::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ValidationError("duplicate parameter name: " + name);
  it->second.grad = Tensor::zeros_like(value);
  it->second.value = std::move(value);
  return it->second;
}

Parameter& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b)
    if (a->first != b->first || a->second.value.shape() != b->second.value.shape()) return false;
  return true;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("copy_values_from: parameter layouts differ");
  auto b = other.params_.begin();
  for (auto a = params_.begin(); a != params_.end(); ++a, ++b) a->second.value = b->second.value;
}

// -------------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(const Tensor& ref) {
  Node n;
  n.ref = &ref;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) throw Error("no gradient recorded for node " + std::to_string(v.id()));
  return n.grad;
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
  return n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
  return push(std::move(value), std::vector<std::size_t>(inputs), std::move(fn));
}

Var Tape::push(Tensor value, const std::vector<std::size_t>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("backward on a variable from another tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) throw ShapeError("backward requires a scalar loss, got shape " + shape_string(lv.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_mut(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      Tensor& dst = n.param->grad;
      if (dst.shape() != n.grad.shape()) dst = Tensor::zeros_like(n.grad);
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

// -------------------------------------------------------------- operations

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = matmul(av, bv);
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) {
      Tensor& da = tp.grad_mut(ai);
      view(da).noalias() += view(g) * view(tp.value(bi)).transpose();
    }
    if (tp.requires_grad(bi)) {
      Tensor& db = tp.grad_mut(bi);
      view(db).noalias() += view(tp.value(ai)).transpose() * view(g);
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    accumulate(tp, ai, tp.grad_of(self));
    accumulate(tp, bi, tp.grad_of(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    accumulate(tp, ai, tp.grad_of(self));
    if (tp.requires_grad(bi)) {
      const Tensor& g = tp.grad_of(self);
      Tensor& db = tp.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) {
      Tensor& da = tp.grad_mut(ai);
      const Tensor& bv = tp.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(bi)) {
      Tensor& db = tp.grad_mut(bi);
      const Tensor& av = tp.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& bv = tp.value(bi);
    if (tp.requires_grad(ai)) {
      Tensor& da = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / bv[i];
    }
    if (tp.requires_grad(bi)) {
      Tensor& db = tp.grad_mut(bi);
      const Tensor& y = tp.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i] * y[i] / bv[i];
    }
  });
}

Var add_bias(Var x, Var b) {
  Tape& t = tape_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw ShapeError("add_bias shape mismatch: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape()));
  Tensor out = xv;
  const std::size_t c = xv.cols();
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  const std::size_t xi = x.id(), bi = b.id();
  return t.push(std::move(out), {xi, bi}, [xi, bi, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    accumulate(tp, xi, g);
    if (tp.requires_grad(bi)) {
      Tensor& db = tp.grad_mut(bi);
      const std::size_t r = g.size() / c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
    }
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= s;
  return unary(x, std::move(out), [s](double, double) { return s; });
}

Var add_scalar(Var x, double s) {
  Tensor out = x.value();
  for (auto& v : out.data()) v += s;
  return unary(x, std::move(out), [](double, double) { return 1.0; });
}

Var transpose(Var x) {
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.push(transpose(x.value()), {xi}, [xi](Tape& tp, std::size_t self) {
    if (tp.requires_grad(xi)) accumulate(tp, xi, transpose(tp.grad_of(self)));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = parts.front().tape();
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols row mismatch: " + shape_string(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(c);
    c += p.cols();
  }
  Tensor out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.ptr() + i * pv.cols(), pv.cols(), out.ptr() + i * c + offsets[k]);
  }
  return t.push(std::move(out), ids, [ids, offsets, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& d = tp.grad_mut(ids[k]);
      const std::size_t pc = d.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) d[i * pc + j] += g[i * c + offsets[k] + j];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.cols())
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_string(xv.shape()));
  const std::size_t r = xv.rows(), c = xv.cols(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.ptr() + i * c + begin, w, out.ptr() + i * w);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c, w, begin](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) d[i * c + begin + j] += g[i * w + j];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = parts.front().tape();
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows column mismatch: " + shape_string(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(r * c);
    r += p.rows();
  }
  Tensor out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k)
    std::copy(parts[k].value().data().begin(), parts[k].value().data().end(), out.ptr() + offsets[k]);
  return t.push(std::move(out), ids, [ids, offsets](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& d = tp.grad_mut(ids[k]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.rows())
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_string(xv.shape()));
  const std::size_t c = xv.cols();
  Tensor out({end - begin, c},
             std::vector<double>(xv.data().begin() + begin * c, xv.data().begin() + end * c));
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, begin, c](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) d[begin * c + i] += g[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return unary(x, std::move(out), [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return unary(x, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  return unary(x, std::move(out), [](double, double y) { return y; });
}

Var log(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::log(v);
  return unary(x, std::move(out), [](double xv, double) { return 1.0 / xv; });
}

Var square(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v * v;
  return unary(x, std::move(out), [](double xv, double) { return 2.0 * xv; });
}

Var abs(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::abs(v);
  return unary(x, std::move(out), [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

Var softmax_rows(Var x) {
  const std::size_t xi = x.id();
  const std::size_t n = x.cols();
  return x.tape().push(softmax_rows(x.value()), {xi}, [xi, n](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    const Tensor& y = tp.value(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < g.size() / n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double* row = out.ptr() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lse;
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, n](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    const Tensor& y = tp.value(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < g.size() / n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (c < 2) throw ShapeError("layer_norm needs rows of length >= 2, got " + shape_string(xv.shape()));
  if (gain.value().size() != c || bias.value().size() != c)
    throw ShapeError("layer_norm affine shape mismatch for " + shape_string(xv.shape()));
  // xhat and 1/sigma are kept for the backward pass.
  Tensor xhat({r, c});
  std::vector<double> inv_std(r);
  Tensor out({r, c});
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.ptr() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (row[j] - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return t.push(std::move(out), {xi, gi, bi},
                [xi, gi, bi, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                  const Tensor& g = tp.grad_of(self);
                  const Tensor& gv = tp.value(gi);
                  if (tp.requires_grad(gi)) {
                    Tensor& dg = tp.grad_mut(gi);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * xhat[i * c + j];
                  }
                  if (tp.requires_grad(bi)) {
                    Tensor& db = tp.grad_mut(bi);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
                  }
                  if (tp.requires_grad(xi)) {
                    Tensor& dx = tp.grad_mut(xi);
                    const double n = static_cast<double>(c);
                    for (std::size_t i = 0; i < r; ++i) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g[i * c + j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * c + j];
                      }
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g[i * c + j] * gv[j];
                        dx[i * c + j] += inv_std[i] / n * (n * dxh - s1 - xhat[i * c + j] * s2);
                      }
                    }
                  }
                });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return x.tape().push(Tensor::scalar(s), {xi}, [xi](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const double g = tp.grad_of(self)[0];
    for (auto& d : tp.grad_mut(xi).data()) d += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_cols(Var x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += xv[i * c + j];
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[i];
  });
}

Var block_mean_rows(Var x, std::size_t block) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (block == 0 || r % block != 0)
    throw ShapeError("block_mean_rows: " + std::to_string(r) + " rows not divisible by " + std::to_string(block));
  const std::size_t nb = r / block;
  Tensor out({nb, c});
  const double inv = 1.0 / static_cast<double>(block);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < block; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] += xv[(b * block + i) * c + j];
  for (auto& v : out.data()) v *= inv;
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, nb, block, c, inv](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < block; ++i)
        for (std::size_t j = 0; j < c; ++j) d[(b * block + i) * c + j] += g[b * c + j] * inv;
  });
}

Var gather_cols(Var x, const std::vector<std::size_t>& index) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (index.size() != r) throw ShapeError("gather_cols: index length does not match rows");
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    if (index[i] >= c) throw ShapeError("gather_cols: column index out of range");
    out[i] = xv[i * c + index[i]];
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, index, c](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < index.size(); ++i) d[i * c + index[i]] += g[i];
  });
}

Var take_rows(Var x, const std::vector<std::size_t>& index) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) throw ShapeError("take_rows: row index out of range");
    std::copy(xv.ptr() + index[i] * c, xv.ptr() + (index[i] + 1) * c, out.ptr() + i * c);
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, index, c](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d[index[i] * c + j] += g[i * c + j];
  });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "minimum");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], b.value()[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return t.push(std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    // Ties route the gradient to the first operand.
    if (tp.requires_grad(ai)) {
      Tensor& d = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] <= bv[i]) d[i] += g[i];
    }
    if (tp.requires_grad(bi)) {
      Tensor& d = tp.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (bv[i] < av[i]) d[i] += g[i];
    }
  });
}

Var clamp(Var x, double lo, double hi) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return unary(x, std::move(out), [lo, hi](double xv, double) { return (xv > lo && xv < hi) ? 1.0 : 0.0; });
}

Var mul_const(Var x, const Tensor& c) {
  require_same(x.value(), c, "mul_const");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, c](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const Tensor& g = tp.grad_of(self);
    Tensor& d = tp.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * c[i];
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ValidationError("dropout rate must be < 1");
  Tensor mask = Tensor::zeros_like(x.value());
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  return mul_const(x, mask);
}

Var scaled_dot_attention(Var q, Var k, Var v, const AttentionShape& s, std::vector<Tensor>* weights) {
  Tape& t = tape_of(q, k);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (s.heads == 0 || qv.cols() % s.heads != 0 || vv.cols() % s.heads != 0)
    throw ShapeError("attention: head count does not divide projection widths");
  if (qv.cols() != kv.cols())
    throw ShapeError("attention: query/key width mismatch " + shape_string(qv.shape()) + " vs " +
                     shape_string(kv.shape()));
  if (qv.rows() != s.batch * s.q_len || kv.rows() != s.batch * s.kv_len || vv.rows() != kv.rows())
    throw ShapeError("attention: row counts " + shape_string(qv.shape()) + ", " + shape_string(kv.shape()) + ", " +
                     shape_string(vv.shape()) + " inconsistent with batch/length");
  if (s.causal && s.q_len != s.kv_len) throw ShapeError("attention: causal mask needs equal lengths");

  const std::size_t dk = qv.cols() / s.heads;
  const std::size_t dv = vv.cols() / s.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t vc = vv.cols();

  Tensor out({s.batch * s.q_len, vc});
  // Softmax weights per (batch, head), kept for the backward pass.
  std::vector<RowMat> probs(s.batch * s.heads);
  MapC mq = view(qv), mk = view(kv), mv = view(vv);
  MapM mo = view(out);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      RowMat sc = scl * mq.block(b * s.q_len, h * dk, s.q_len, dk) * mk.block(b * s.kv_len, h * dk, s.kv_len, dk).transpose();
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t visible = s.causal ? i + 1 : s.kv_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, sc(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          sc(i, j) = j < visible ? std::exp(sc(i, j) - mx) : 0.0;
          total += sc(i, j);
        }
        sc.row(i) /= total;
      }
      mo.block(b * s.q_len, h * dv, s.q_len, dv).noalias() = sc * mv.block(b * s.kv_len, h * dv, s.kv_len, dv);
      if (weights) {
        Tensor w({s.q_len, s.kv_len});
        view(w) = sc;
        weights->push_back(std::move(w));
      }
      probs[b * s.heads + h] = std::move(sc);
    }
  }
  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  return t.push(std::move(out), {qi, ki, vi},
                [qi, ki, vi, s, dk, dv, scl, probs = std::move(probs)](Tape& tp, std::size_t self) {
                  MapC g = view(tp.grad_of(self));
                  MapC mq = view(tp.value(qi)), mk = view(tp.value(ki)), mv = view(tp.value(vi));
                  const bool gq = tp.requires_grad(qi), gk = tp.requires_grad(ki), gv = tp.requires_grad(vi);
                  Tensor* dq = gq ? &tp.grad_mut(qi) : nullptr;
                  Tensor* dkt = gk ? &tp.grad_mut(ki) : nullptr;
                  Tensor* dvt = gv ? &tp.grad_mut(vi) : nullptr;
                  for (std::size_t b = 0; b < s.batch; ++b) {
                    for (std::size_t h = 0; h < s.heads; ++h) {
                      const RowMat& p = probs[b * s.heads + h];
                      auto go = g.block(b * s.q_len, h * dv, s.q_len, dv);
                      auto vb = mv.block(b * s.kv_len, h * dv, s.kv_len, dv);
                      if (dvt) view(*dvt).block(b * s.kv_len, h * dv, s.kv_len, dv).noalias() += p.transpose() * go;
                      if (!dq && !dkt) continue;
                      RowMat dp = go * vb.transpose();
                      // Softmax backward; masked entries have p == 0 and stay 0.
                      RowMat ds = p.cwiseProduct(dp);
                      Eigen::VectorXd rs = ds.rowwise().sum();
                      ds -= p.cwiseProduct(rs.replicate(1, s.kv_len));
                      ds *= scl;
                      if (dq)
                        view(*dq).block(b * s.q_len, h * dk, s.q_len, dk).noalias() +=
                            ds * mk.block(b * s.kv_len, h * dk, s.kv_len, dk);
                      if (dkt)
                        view(*dkt).block(b * s.kv_len, h * dk, s.kv_len, dk).noalias() +=
                            ds.transpose() * mq.block(b * s.q_len, h * dk, s.q_len, dk);
                    }
                  }
                });
}

}  // namespace rulmdp
