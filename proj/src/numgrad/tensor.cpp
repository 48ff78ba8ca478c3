#include "gcrl/numgrad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace gcrl::ng {
namespace {

using NodePtr = std::shared_ptr<Node>;

thread_local int no_grad_depth = 0;

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << "x" << m.cols() << ")";
  return os.str();
}

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

// Builds a node; parents/backward are attached only when a gradient is needed.
Tensor make_result(Matrix value, const char* op, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool needs = no_grad_depth == 0 && std::any_of(parents.begin(), parents.end(),
                           [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// The operand itself when it already has the target shape, otherwise a
// materialised broadcast copy held in `tmp`.
const Matrix& expanded(const Matrix& m, Eigen::Index rows, Eigen::Index cols, Matrix& tmp) {
  if (m.rows() == rows && m.cols() == cols) return m;
  tmp = m.replicate(rows / m.rows(), cols / m.cols());
  return tmp;
}

// Sums a gradient of the broadcast shape back down to the operand shape.
Matrix reduce_to(Matrix g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && g.rows() != 1) g = g.colwise().sum().eval();
  if (cols == 1 && g.cols() != 1) g = g.rowwise().sum().eval();
  return g;
}

std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Matrix& a, const Matrix& b,
                                                      const char* op) {
  auto dim = [&](Eigen::Index x, Eigen::Index y) -> Eigen::Index {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(std::string("incompatible shapes for '") + op + "': " + shape_str(a) +
                     " vs " + shape_str(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

// Interior nodes start each reverse pass without a gradient buffer, so the
// first contribution can be moved in.
void accumulate(Node& parent, Matrix g) {
  if (!parent.requires_grad) return;
  if (!parent.is_leaf && parent.grad.size() == 0) {
    parent.grad = std::move(g);
    return;
  }
  parent.ensure_grad();
  parent.grad += g;
}

// ga/gb receive the upstream gradient and accessors for the broadcast
// operands, which are only materialised when a rule asks for them.
template <typename Fwd, typename GradA, typename GradB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA ga, GradB gb) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  auto [r, c] = broadcast_shape(av, bv, op);
  Matrix ta, tb;
  Matrix out = fwd(expanded(av, r, c, ta), expanded(bv, r, c, tb));
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), op, {pa, pb}, [pa, pb, r, c, ga, gb](Node& self) {
    Matrix ta, tb;
    auto A = [&]() -> const Matrix& { return expanded(pa->value, r, c, ta); };
    auto B = [&]() -> const Matrix& { return expanded(pb->value, r, c, tb); };
    if (pa->requires_grad) {
      accumulate(*pa, reduce_to(ga(self.grad, A, B), pa->value.rows(), pa->value.cols()));
    }
    if (pb->requires_grad) {
      accumulate(*pb, reduce_to(gb(self.grad, A, B), pb->value.rows(), pb->value.cols()));
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  Matrix out = fwd(a.value());
  NodePtr pa = a.node();
  return make_result(std::move(out), op, {pa}, [pa, deriv](Node& self) {
    accumulate(*pa, deriv(pa->value, self.value, self.grad));
  });
}

}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(value()));
  return node_->value(0, 0);
}

Matrix Tensor::grad_or_zero() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

Tensor Tensor::detach() const { return constant(node_->value); }

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(value()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad.resize(0, 0);
  }
  node_->ensure_grad();
  node_->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() > 0) n->backward_fn(*n);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
      [](const Matrix& g, auto&&, auto&&) -> Matrix { return g; },
      [](const Matrix& g, auto&&, auto&&) -> Matrix { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
      [](const Matrix& g, auto&&, auto&&) -> Matrix { return g; },
      [](const Matrix& g, auto&&, auto&&) -> Matrix { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul",
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
      [](const Matrix& g, auto&&, auto&& y) -> Matrix { return g.cwiseProduct(y()); },
      [](const Matrix& g, auto&& x, auto&&) -> Matrix { return g.cwiseProduct(x()); });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div",
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
      [](const Matrix& g, auto&&, auto&& y) -> Matrix { return g.cwiseQuotient(y()); },
      [](const Matrix& g, auto&& x, auto&& y) -> Matrix {
        const Matrix& yv = y();
        return (-g.array() * x().array() / (yv.array() * yv.array())).matrix();
      });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  return unary(
      a, "scale", [c](const Matrix& x) -> Matrix { return x * c; },
      [c](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g * c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      a, "add_scalar", [c](const Matrix& x) -> Matrix { return (x.array() + c).matrix(); },
      [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.value()) + " x " +
                     shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  NodePtr pa = a.node(), pb = b.node();
  return make_result(std::move(out), "matmul", {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad * pb->value.transpose());
    if (pb->requires_grad) accumulate(*pb, pa->value.transpose() * self.grad);
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine shape mismatch: " + shape_str(x.value()) + " x " +
                     shape_str(w.value()) + " + " + shape_str(b.value()));
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  NodePtr px = x.node(), pw = w.node(), pb = b.node();
  return make_result(std::move(out), "affine", {px, pw, pb}, [px, pw, pb](Node& self) {
    if (px->requires_grad) accumulate(*px, self.grad * pw->value.transpose());
    if (pw->requires_grad) accumulate(*pw, px->value.transpose() * self.grad);
    if (pb->requires_grad) accumulate(*pb, self.grad.colwise().sum());
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  NodePtr pa = a.node();
  return make_result(std::move(out), "transpose", {pa}, [pa](Node& self) {
    accumulate(*pa, self.grad.transpose());
  });
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape cannot change element count: " + shape_str(a.value()));
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  NodePtr pa = a.node();
  return make_result(std::move(out), "reshape", {pa}, [pa](Node& self) {
    accumulate(*pa, Eigen::Map<const Matrix>(self.grad.data(), pa->value.rows(),
                                             pa->value.cols()));
  });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](const Matrix& x) -> Matrix { return x.array().exp().matrix(); },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return g.cwiseProduct(y);
      });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return g.cwiseQuotient(x);
      });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh",
      [](const Matrix& x) -> Matrix {
        // Eigen's double tanh is scalar; this form vectorises through exp and
        // stays within a few ulp in absolute terms.
        return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
      },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return (g.array() * (1.0 - y.array().square())).matrix();
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](const Matrix& x) -> Matrix { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return (g.array() * y.array() * (1.0 - y.array())).matrix();
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](const Matrix& x) -> Matrix { return x.array().square().matrix(); },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (2.0 * g.array() * x.array()).matrix();
      });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](const Matrix& x) -> Matrix { return x.array().sqrt().matrix(); },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return (0.5 * g.array() / y.array()).matrix();
      });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, "leaky_relu",
      [slope](const Matrix& x) -> Matrix {
        return (x.array() > 0.0).select(x.array(), slope * x.array()).matrix();
      },
      [slope](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (x.array() > 0.0).select(g.array(), slope * g.array()).matrix();
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](const Matrix& x) -> Matrix { return x.cwiseMax(lo).cwiseMin(hi); },
      [lo, hi](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return g.binaryExpr(x, [lo, hi](double gv, double xv) {
          return (xv < lo || xv > hi) ? 0.0 : gv;
        });
      });
}

Tensor sum(const Tensor& a) {
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  NodePtr pa = a.node();
  return make_result(std::move(out), "sum", {pa}, [pa](Node& self) {
    accumulate(*pa, Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_sum(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  NodePtr pa = a.node();
  return make_result(std::move(out), "row_sum", {pa}, [pa](Node& self) {
    accumulate(*pa, self.grad.replicate(1, pa->value.cols()));
  });
}

Tensor col_sum(const Tensor& a) {
  Matrix out = a.value().colwise().sum();
  NodePtr pa = a.node();
  return make_result(std::move(out), "col_sum", {pa}, [pa](Node& self) {
    accumulate(*pa, self.grad.replicate(pa->value.rows(), 1));
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  const Matrix& x = a.value();
  Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out(i, 0) = mx(i) + std::log((x.row(i).array() - mx(i)).exp().sum());
  }
  NodePtr pa = a.node();
  return make_result(out, "logsumexp_rows", {pa}, [pa](Node& self) {
    const Matrix& xv = pa->value;
    Matrix g(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      g.row(i) = (xv.row(i).array() - self.value(i, 0)).exp() * self.grad(i, 0);
    }
    accumulate(*pa, g);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  auto captured = nodes;
  return make_result(std::move(out), "concat_cols", std::move(nodes),
                     [captured, offsets](Node& self) {
                       for (std::size_t i = 0; i < captured.size(); ++i) {
                         auto& p = *captured[i];
                         if (p.requires_grad) {
                           accumulate(p, self.grad.middleCols(offsets[i], p.value.cols()));
                         }
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  auto captured = nodes;
  return make_result(std::move(out), "concat_rows", std::move(nodes),
                     [captured, offsets](Node& self) {
                       for (std::size_t i = 0; i < captured.size(); ++i) {
                         auto& p = *captured[i];
                         if (p.requires_grad) {
                           accumulate(p, self.grad.middleRows(offsets[i], p.value.rows()));
                         }
                       }
                     });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols out of range on " + shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  NodePtr pa = a.node();
  return make_result(std::move(out), "slice_cols", {pa}, [pa, start, count](Node& self) {
    pa->ensure_grad();
    pa->grad.middleCols(start, count) += self.grad;
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows out of range on " + shape_str(a.value()));
  }
  Matrix out = a.value().middleRows(start, count);
  NodePtr pa = a.node();
  return make_result(std::move(out), "slice_rows", {pa}, [pa, start, count](Node& self) {
    pa->ensure_grad();
    pa->grad.middleRows(start, count) += self.grad;
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Eigen::Index> index) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw ShapeError("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  NodePtr pa = a.node();
  std::vector<Eigen::Index> idx(index.begin(), index.end());
  return make_result(std::move(out), "gather_rows", {pa}, [pa, idx = std::move(idx)](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      pa->grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

}  // namespace gcrl::ng
