#include "gcrl/flows.hpp"

#include <cmath>
#include <stdexcept>

namespace gcrl {

Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

CouplingLayer::CouplingLayer(Eigen::RowVectorXd mask, Eigen::Index hidden,
                             const std::string& prefix, Rng& rng)
    : mask_(std::move(mask)) {
  const Eigen::Index d = mask_.size();
  const double ones = mask_.sum();
  if (ones < 1.0 || ones > static_cast<double>(d) - 1.0) {
    throw std::invalid_argument("CouplingLayer: mask needs at least one 0 and one 1");
  }
  auto param = [&](const char* n, Matrix v) { return Param{prefix + "." + n, Tensor::parameter(std::move(v))}; };
  s_w1_ = param("scale.w1", fan_in_uniform(d, hidden, rng));
  s_b1_ = param("scale.b1", Matrix::Zero(1, hidden));
  s_w2_ = param("scale.w2", Matrix::Zero(hidden, d));
  s_b2_ = param("scale.b2", Matrix::Zero(1, d));
  t_w1_ = param("shift.w1", fan_in_uniform(d, hidden, rng));
  t_b1_ = param("shift.b1", Matrix::Zero(1, hidden));
  t_w2_ = param("shift.w2", Matrix::Zero(hidden, d));
  t_b2_ = param("shift.b2", Matrix::Zero(1, d));
}

CouplingLayer::ScaleShift CouplingLayer::conditioner(const Tensor& masked_input) const {
  Tensor free = Tensor::constant(Matrix(1.0 - mask_.array()));
  Tensor hs = ng::tanh(ng::affine(masked_input, s_w1_.use(), s_b1_.use()));
  Tensor s = 2.0 * ng::tanh(ng::affine(hs, s_w2_.use(), s_b2_.use())) * free;
  Tensor ht = ng::tanh(ng::affine(masked_input, t_w1_.use(), t_b1_.use()));
  Tensor t = ng::affine(ht, t_w2_.use(), t_b2_.use()) * free;
  return {s, t};
}

CouplingLayer::Output CouplingLayer::forward(const Tensor& u) const {
  if (u.cols() != dim()) throw ng::ShapeError("CouplingLayer::forward: dimension mismatch");
  Tensor m = Tensor::constant(Matrix(mask_));
  auto [s, t] = conditioner(u * m);
  return {u * ng::exp(s) + t, ng::row_sum(s)};
}

CouplingLayer::Output CouplingLayer::inverse(const Tensor& x) const {
  if (x.cols() != dim()) throw ng::ShapeError("CouplingLayer::inverse: dimension mismatch");
  Tensor m = Tensor::constant(Matrix(mask_));
  auto [s, t] = conditioner(x * m);
  return {(x - t) * ng::exp(-s), -ng::row_sum(s)};
}

std::vector<Param*> CouplingLayer::parameters() {
  return {&s_w1_, &s_b1_, &s_w2_, &s_b2_, &t_w1_, &t_b1_, &t_w2_, &t_b2_};
}

void CouplingLayer::randomize(Rng& rng, double output_scale) {
  for (Param* p : parameters()) {
    Matrix& v = p->tensor.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-1.0, 1.0) * output_scale;
  }
}

FlowStack::FlowStack(Eigen::Index dim, int layers, Eigen::Index hidden, const std::string& prefix,
                     Rng& rng)
    : dim_(dim) {
  if (dim < 2) throw std::invalid_argument("FlowStack: coupling layers need dim >= 2");
  if (layers < 1) throw std::invalid_argument("FlowStack: needs at least one layer");
  for (int k = 0; k < layers; ++k) {
    Eigen::RowVectorXd mask(dim);
    for (Eigen::Index i = 0; i < dim; ++i) mask(i) = ((i + k) % 2 == 0) ? 1.0 : 0.0;
    layers_.emplace_back(mask, hidden, prefix + ".layer" + std::to_string(k), rng);
  }
}

Tensor FlowStack::log_prob(const Tensor& x) const { return flow_log_prob(x, *this); }

Matrix FlowStack::sample(Eigen::Index n, Rng& rng) const {
  Tensor u = Tensor::constant(rng.normal_matrix(n, dim_));
  return flow_forward(u, *this).x.value();
}

std::vector<Param*> FlowStack::parameters() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    auto p = l.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::unique_ptr<Density> FlowStack::clone() const {
  auto c = std::make_unique<FlowStack>(*this);
  for (auto& l : c->layers_) {
    for (Param* p : l.parameters()) p->tensor = Tensor::parameter(p->tensor.value());
  }
  return c;
}

void FlowStack::randomize(Rng& rng, double output_scale) {
  for (auto& l : layers_) l.randomize(rng, output_scale);
}

FlowResult flow_forward(const Tensor& u, const FlowStack& f) {
  if (u.cols() != f.dim()) throw ng::ShapeError("flow_forward: dimension mismatch");
  Tensor x = u;
  Tensor log_det = Tensor::zeros(u.rows(), 1);
  for (const auto& layer : f.layers()) {
    auto out = layer.forward(x);
    x = out.y;
    log_det = log_det + out.log_det;
  }
  return {x, log_det};
}

FlowResult flow_inverse(const Tensor& x, const FlowStack& f) {
  if (x.cols() != f.dim()) throw ng::ShapeError("flow_inverse: dimension mismatch");
  Tensor u = x;
  Tensor log_det = Tensor::zeros(x.rows(), 1);
  const auto& layers = f.layers();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    auto out = it->inverse(u);
    u = out.y;
    log_det = log_det + out.log_det;
  }
  return {u, log_det};
}

Tensor flow_log_prob(const Tensor& x, const FlowStack& f) {
  auto inv = flow_inverse(x, f);
  return standard_normal_log_prob(inv.x) + inv.log_det;
}

}  // namespace gcrl
