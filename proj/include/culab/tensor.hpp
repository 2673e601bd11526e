#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace culab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, persists across backward calls
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Pulls this node's grad into the parents' grads. Only set on interior
  // nodes of a recorded graph.
  std::function<void(TensorNode&)> backprop;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major array of doubles participating in define-by-run
// reverse-mode differentiation. Copying a Tensor copies a handle to the
// same node; graphs are built by the free operations below and live as
// long as some handle keeps them reachable.
class Tensor {
 public:
  Tensor() = default;

  // Constant (non-differentiable) tensors. Creation rejects NaN/Inf.
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  // Differentiable leaf (a parameter).
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // leaf tensors only
  double value() const;                   // single-element convenience
  double at(std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  // Gradient accumulated by backward(); ContractError if never populated.
  const std::vector<double>& grad() const;
  bool has_grad() const;
  void zero_grad();

  // Value copy detached from any graph.
  Tensor detach() const;

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorNode&)> backprop);
};

// When enabled, every operation checks its output for NaN/Inf and throws
// NumericError on the first hit.
void set_check_finite(bool enabled);
bool check_finite_enabled();

// ----- primitive operations ------------------------------------------------

// Matrix product of 2-D tensors [p x q] . [q x r].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D

// Elementwise binary ops; operands must be same-shape, or one of them a
// single-element tensor which is broadcast. No other broadcasting exists.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor div(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }

// Elementwise unary ops.
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // DomainError on non-positive input
Tensor sqrt(const Tensor& a);  // DomainError on non-positive input
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor softplus(const Tensor& a);

// Reductions. Axis-less forms reduce to a scalar; the axis forms apply to
// 2-D tensors and produce a rank-1 result. max routes its gradient to the
// first maximizer (ties broken by lowest flat index).
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor max(const Tensor& a);
Tensor max(const Tensor& a, std::size_t axis);

// l2 norm of each row of a 2-D tensor -> rank-1 [rows]. Well-defined at a
// zero row, where the (sub)gradient is taken as 0.
Tensor row_norm(const Tensor& a);

// Structural ops used by the network heads.
Tensor reshape(const Tensor& a, Shape shape);  // same element count
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor add_row_bias(const Tensor& m, const Tensor& bias);  // [r x c] + [c]
Tensor softmax_rows(const Tensor& m);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t row0, std::size_t nrows);
// Places values[i] at flat position positions[i] of a zero tensor of the
// given shape. Positions must be distinct.
Tensor scatter(const Tensor& values, const std::vector<std::size_t>& positions, Shape shape);
Tensor gather(const Tensor& a, const std::vector<std::size_t>& positions);

// log det of a symmetric positive definite 2-D tensor (via Cholesky).
Tensor logdet_spd(const Tensor& a);

// ----- autodiff -------------------------------------------------------------

// Reverse pass from a scalar loss; accumulates into .grad() of every
// differentiable tensor the loss depends on. Repeated calls accumulate.
void backward(const Tensor& loss);

// Plain gradient descent step with optional elementwise gradient clipping:
// p <- p - lr * clamp(grad, -clip, clip). ContractError if a parameter has
// no populated gradient.
struct GradientDescent {
  double lr = 1e-3;
  std::optional<double> clip;
  void step(std::vector<Tensor>& params) const;
};

void zero_grads(std::vector<Tensor>& params);

}  // namespace culab
