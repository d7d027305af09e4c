#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rulmdp/rng.hpp"
#include "rulmdp/tensor.hpp"

namespace rulmdp {

struct Parameter {
  Tensor value;
  Tensor grad;
};

// Named parameters, iterated in lexicographic key order. Node-based storage
// keeps Parameter addresses stable while a tape holds pointers to them.
class ParamSet {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  bool same_layout(const ParamSet& other) const;
  // Overwrites values with those of `other`, which must have the same layout.
  void copy_values_from(const ParamSet& other);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamic reverse-mode tape. Operations append nodes in evaluation order;
// backward() walks them in reverse once, accumulating gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Borrowed tensor; must outlive the tape. No gradient.
  Var leaf(const Tensor& ref);
  // Borrowed parameter; backward() adds into p.grad.
  Var param(Parameter& p);
  // Owned tensor whose gradient can be read back with grad().
  Var input(Tensor value);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() target with respect to v.
  const Tensor& grad(Var v) const;

  void backward(Var loss);
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by operation implementations.
  Var push(Tensor value, std::initializer_list<std::size_t> inputs, BackwardFn fn);
  Var push(Tensor value, const std::vector<std::size_t>& inputs, BackwardFn fn);
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_mut(std::size_t id);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. All operate on rank-2 tensors.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
// x[r x c] + b[1 x c] broadcast over rows.
Var add_bias(Var x, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var transpose(Var x);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var relu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var abs(Var x);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
// Row-wise normalization to zero mean / unit variance, then gain and bias [1 x c].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var sum(Var x);
Var mean(Var x);
// Row sums, [r x c] -> [r x 1].
Var sum_cols(Var x);
// Mean over consecutive groups of `block` rows, [B*block x c] -> [B x c].
Var block_mean_rows(Var x, std::size_t block);
// Picks x(i, index[i]) for each row, [r x c] -> [r x 1].
Var gather_cols(Var x, const std::vector<std::size_t>& index);
// Row i of the result is row index[i] of x; rows may repeat.
Var take_rows(Var x, const std::vector<std::size_t>& index);
Var minimum(Var a, Var b);
// Gradient passes only where lo < x < hi.
Var clamp(Var x, double lo, double hi);
// Elementwise product with a constant tensor.
Var mul_const(Var x, const Tensor& c);
// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t q_len = 1;
  std::size_t kv_len = 1;
  bool causal = false;
};

// Scaled dot-product attention for `batch` independent sequences and `heads`
// column blocks: q [batch*q_len x heads*dk], k [batch*kv_len x heads*dk],
// v [batch*kv_len x heads*dv] -> [batch*q_len x heads*dv]. Head h uses column
// block h. When `weights` is given it receives batch*heads softmax matrices
// [q_len x kv_len], ordered batch-major.
Var scaled_dot_attention(Var q, Var k, Var v, const AttentionShape& shape,
                         std::vector<Tensor>* weights = nullptr);

}  // namespace rulmdp
