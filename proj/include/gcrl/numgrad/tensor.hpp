#pragma once

// Dense 2-D float64 tensors with a tape-free reverse-mode autodiff graph.
//
// Every tensor is a (rows x cols) row-major matrix; scalars are 1x1. Ops
// record their parents and a backward closure when any input requires a
// gradient. Calling backward() on a scalar walks the graph in reverse
// topological order and accumulates into every reachable leaf.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcrl::ng {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when an op produces NaN or Inf, or when shapes do not line up.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix::Zero(value.rows(), value.cols());
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);
  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }
  static Tensor zeros(Eigen::Index rows, Eigen::Index cols) {
    return constant(Matrix::Zero(rows, cols));
  }

  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }

  const Matrix& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading. Not tracked.
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->grad.size() > 0; }
  const Matrix& grad() const { return node_->grad; }
  /// Gradient, or zeros when nothing was ever accumulated.
  Matrix grad_or_zero() const;
  void zero_grad();

  /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no graph (results are constants).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Elementwise binary ops broadcast a (1 x c), (r x 1) or (1 x 1) operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + b with b a (1 x cols) row broadcast over rows.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-major reshape; element count must be preserved.
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
/// Hard clamp; gradient is zero where the input lies outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum across columns: (r x c) -> (r x 1).
Tensor row_sum(const Tensor& a);
/// Sum across rows: (r x c) -> (1 x c).
Tensor col_sum(const Tensor& a);
/// Stable log(sum(exp)) across columns: (r x c) -> (r x 1).
Tensor logsumexp_rows(const Tensor& a);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
/// out[i] = a[index[i]]; backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const Eigen::Index> index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }

}  // namespace gcrl::ng
