#include "gcrl/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gcrl {
namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
}

DiagGaussian DiagGaussian::make(Tensor mu, Tensor log_var) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols()) {
    throw ng::ShapeError("DiagGaussian: mu and log_var shapes differ");
  }
  return {std::move(mu), ng::clamp(log_var, kLogVarMin, kLogVarMax)};
}

Tensor gaussian_log_prob(const Tensor& x, const DiagGaussian& g) {
  if (x.cols() != g.dim() || (x.rows() != g.rows() && g.rows() != 1)) {
    throw ng::ShapeError("gaussian_log_prob: dimension mismatch");
  }
  Tensor diff = x - g.mu;
  Tensor quad = ng::square(diff) * ng::exp(-g.log_var);
  Tensor per_dim = ng::add_scalar(-0.5 * (g.log_var + quad), -kHalfLog2Pi);
  return ng::row_sum(per_dim);
}

Tensor standard_normal_log_prob(const Tensor& x) {
  return ng::add_scalar(-0.5 * ng::row_sum(ng::square(x)),
                        -kHalfLog2Pi * static_cast<double>(x.cols()));
}

Tensor reparam_sample(const DiagGaussian& g, const Tensor& eps) {
  if (eps.cols() != g.dim() || eps.rows() != g.rows()) {
    throw ng::ShapeError("reparam_sample: eps shape mismatch");
  }
  return g.mu + ng::exp(0.5 * g.log_var) * eps;
}

std::vector<Eigen::Index> repeat_index(Eigen::Index n, Eigen::Index times) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(n * times));
  for (Eigen::Index k = 0; k < times; ++k)
    for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

DiagGaussian repeat_rows(const DiagGaussian& g, Eigen::Index times) {
  if (times == 1) return g;
  auto idx = repeat_index(g.rows(), times);
  return {ng::gather_rows(g.mu, idx), ng::gather_rows(g.log_var, idx)};
}

LearnableGaussian::LearnableGaussian(Eigen::Index dim, const std::string& prefix)
    : mean_{prefix + ".mean", Tensor::parameter(Matrix::Zero(1, dim))},
      log_var_{prefix + ".log_var", Tensor::parameter(Matrix::Zero(1, dim))} {}

Tensor LearnableGaussian::log_prob(const Tensor& x) const {
  return gaussian_log_prob(x, DiagGaussian::make(mean_.use(), log_var_.use()));
}

Matrix LearnableGaussian::sample(Eigen::Index n, Rng& rng) const {
  Matrix eps = rng.normal_matrix(n, dim());
  Eigen::RowVectorXd sd =
      (0.5 * log_var_.tensor.value().array().cwiseMax(kLogVarMin).cwiseMin(kLogVarMax)).exp();
  Matrix out(n, dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = mean_.tensor.value().row(0) + eps.row(i).cwiseProduct(sd);
  }
  return out;
}

std::unique_ptr<Density> LearnableGaussian::clone() const {
  auto c = std::make_unique<LearnableGaussian>(dim(), "");
  c->mean_ = {mean_.name, Tensor::parameter(mean_.tensor.value()), mean_.frozen};
  c->log_var_ = {log_var_.name, Tensor::parameter(log_var_.tensor.value()), log_var_.frozen};
  return c;
}

Mixture::Mixture(std::vector<std::unique_ptr<Density>> components, const std::string& prefix)
    : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("Mixture: needs at least one component");
  for (const auto& c : components_) {
    if (c->dim() != components_.front()->dim()) {
      throw ng::ShapeError("Mixture: component dimensions differ");
    }
  }
  const auto k = static_cast<Eigen::Index>(components_.size());
  logits_ = {prefix + ".logits", Tensor::parameter(Matrix::Zero(1, k))};
}

Mixture::Mixture(const Mixture& other)
    : logits_{other.logits_.name, Tensor::parameter(other.logits_.tensor.value()),
              other.logits_.frozen} {
  for (const auto& c : other.components_) components_.push_back(c->clone());
}

Mixture& Mixture::operator=(const Mixture& other) {
  if (this != &other) *this = Mixture(other);
  return *this;
}

void Mixture::set_weights(const std::vector<double>& weights) {
  if (weights.size() != components_.size()) {
    throw std::invalid_argument("Mixture::set_weights: expected " +
                                std::to_string(components_.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("Mixture::set_weights: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (total == 0.0) throw std::invalid_argument("Mixture::set_weights: all weights are zero");
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("Mixture::set_weights: weights must sum to 1");
  }
  Matrix& l = logits_.tensor.mutable_value();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    l(0, static_cast<Eigen::Index>(k)) = weights[k] > 0.0 ? std::log(weights[k]) : kZeroLogit;
  }
}

Eigen::VectorXd Mixture::weights() const {
  Eigen::RowVectorXd l = logits_.tensor.value().row(0);
  Eigen::RowVectorXd e = (l.array() - l.maxCoeff()).exp();
  return (e / e.sum()).transpose();
}

Tensor Mixture::log_weights() const {
  Tensor l = logits_.use();
  return l - ng::logsumexp_rows(l);
}

std::vector<Param*> Mixture::component_parameters() {
  std::vector<Param*> out;
  for (auto& c : components_) {
    auto p = c->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Tensor mixture_joint_log_prob(const Tensor& x, const Mixture& m) {
  std::vector<Tensor> parts;
  parts.reserve(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) parts.push_back(m.component(k).log_prob(x));
  return ng::concat_cols(parts) + m.log_weights();
}

Tensor mixture_log_prob(const Tensor& x, const Mixture& m) {
  if (x.cols() != m.dim()) throw ng::ShapeError("mixture_log_prob: dimension mismatch");
  return ng::logsumexp_rows(mixture_joint_log_prob(x, m));
}

MixtureDraw mixture_sample(const Mixture& m, Rng& rng) {
  std::vector<std::size_t> comp;
  Matrix x = mixture_sample_rows(m, 1, rng, &comp);
  return {std::vector<double>(x.data(), x.data() + x.size()), comp.front()};
}

Matrix mixture_sample_rows(const Mixture& m, Eigen::Index n, Rng& rng,
                           std::vector<std::size_t>* components) {
  Eigen::VectorXd w = m.weights();
  std::vector<std::size_t> comp(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> count(m.size(), 0);
  for (auto& k : comp) {
    k = rng.categorical(w);
    ++count[k];
  }
  // One batched draw per component, handed out in row order.
  Matrix out(n, m.dim());
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (count[k] == 0) continue;
    Matrix draws = m.component(k).sample(count[k], rng);
    Eigen::Index next = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (comp[static_cast<std::size_t>(i)] == k) out.row(i) = draws.row(next++);
    }
  }
  if (components) *components = std::move(comp);
  return out;
}

}  // namespace gcrl
