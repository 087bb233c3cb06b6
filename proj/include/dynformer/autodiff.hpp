#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynformer/cost.hpp"
#include "dynformer/tensor.hpp"

namespace dynformer {

// A named trainable tensor with an additive gradient accumulator. Complex
// weights are stored with a trailing (re, im) axis.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const { return name_; }
  const Tensor& value() const { return value_; }
  Tensor& mutable_value() { return value_; }
  const Tensor& grad() const { return grad_; }
  Tensor& mutable_grad() { return grad_; }
  std::size_t size() const { return value_.size(); }

  void zero_grad();

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the
// lifetime of its tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of executed operations. One tape belongs to one thread; a
// training step records its forward pass here and replays it in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable input whose gradient can be read back with grad().
  Var leaf(Tensor value);
  // Differentiable input whose gradient is added to p.grad() by backward().
  Var param(Parameter& p);

  // Appends an operation output. The backward closure is kept only when at
  // least one input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Zero-initialized on first access. Used by backward closures.
  Tensor& grad_accumulator(Var v);

  // Gradient of the last backward() loss with respect to v (zeros if v was
  // not reached).
  Tensor grad(Var v) const;

  void backward(Var loss);

  // Node ids visited by the last backward(), in visiting order.
  const std::vector<std::size_t>& last_backward_order() const { return order_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;  // stable references across push_back
  std::vector<std::size_t> order_;
};

// ---- differentiable operations -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// s must hold exactly one value.
Var scale_by(Var a, Var s);

// [m, k] x [k, n] -> [m, n]
Var matmul(Var a, Var b, CostCategory cost = CostCategory::kPointwise);
Var transpose(Var a);

// Pointwise affine map over the last axis: x[..., d_in] W[d_in, d_out] + b.
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);

Var gelu(Var x);
Var softmax_last(Var x);

Var mean_over_axis(Var x, std::size_t axis);
Var sum(Var x);
Var reshape(Var x, Shape shape);

// x[n, d] / s[n], row by row.
Var divide_rows(Var x, Var s);

Var slice_last(Var x, std::size_t begin, std::size_t end);
Var concat_last(std::span<const Var> parts);
// Index / stack along axis 0.
Var select(Var x, std::size_t index);
Var stack(std::span<const Var> parts);

// mean over samples of ||pred - truth||^2 / ||truth||^2; axis 0 indexes
// samples. Throws ValidationError naming the first zero-norm truth sample.
Var relative_mse_loss(Var pred, const Tensor& truth);

}  // namespace dynformer
