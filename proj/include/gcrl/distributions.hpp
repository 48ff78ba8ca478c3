#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gcrl/numgrad/tensor.hpp"
#include "gcrl/rng.hpp"

namespace gcrl {

using ng::Matrix;
using ng::Tensor;

/// A named trainable tensor. A frozen parameter is read through a detached
/// copy, so no gradient can reach it from graphs built while frozen.
struct Param {
  std::string name;
  Tensor tensor;
  bool frozen = false;

  Tensor use() const { return frozen ? tensor.detach() : tensor; }
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Batched diagonal Gaussian; row i is an independent d-dimensional density.
struct DiagGaussian {
  Tensor mu;
  Tensor log_var;

  /// Clamps log_var to [kLogVarMin, kLogVarMax].
  static DiagGaussian make(Tensor mu, Tensor log_var);
  Eigen::Index dim() const { return mu.cols(); }
  Eigen::Index rows() const { return mu.rows(); }
};

/// Per-row log density, (n x d) -> (n x 1).
Tensor gaussian_log_prob(const Tensor& x, const DiagGaussian& g);
Tensor standard_normal_log_prob(const Tensor& x);
/// mu + exp(log_var / 2) * eps.
Tensor reparam_sample(const DiagGaussian& g, const Tensor& eps);
/// Repeats every row of the density `times` times, sample-major
/// (row k*n + i is agent i, draw k).
DiagGaussian repeat_rows(const DiagGaussian& g, Eigen::Index times);
std::vector<Eigen::Index> repeat_index(Eigen::Index n, Eigen::Index times);

/// Trainable density over R^d used for latent priors and mixture components.
class Density {
 public:
  virtual ~Density() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Tensor log_prob(const Tensor& x) const = 0;
  virtual Matrix sample(Eigen::Index n, Rng& rng) const = 0;
  virtual std::vector<Param*> parameters() = 0;
  virtual std::unique_ptr<Density> clone() const = 0;
};

/// Diagonal Gaussian with learnable mean and log-variance, initialised to N(0, I).
class LearnableGaussian final : public Density {
 public:
  LearnableGaussian(Eigen::Index dim, const std::string& prefix);

  Eigen::Index dim() const override { return mean_.tensor.cols(); }
  Tensor log_prob(const Tensor& x) const override;
  Matrix sample(Eigen::Index n, Rng& rng) const override;
  std::vector<Param*> parameters() override { return {&mean_, &log_var_}; }
  std::unique_ptr<Density> clone() const override;

  Param& mean() { return mean_; }
  Param& log_var() { return log_var_; }

 private:
  Param mean_;
  Param log_var_;
};

/// Mixture sum_k w_k p_k(x) with weights stored as logits.
class Mixture {
 public:
  static constexpr double kZeroLogit = -1e4;

  Mixture(std::vector<std::unique_ptr<Density>> components, const std::string& prefix);
  Mixture(const Mixture& other);
  Mixture& operator=(const Mixture& other);
  Mixture(Mixture&&) noexcept = default;
  Mixture& operator=(Mixture&&) noexcept = default;

  std::size_t size() const { return components_.size(); }
  Eigen::Index dim() const { return components_.front()->dim(); }
  const Density& component(std::size_t k) const { return *components_[k]; }
  Density& component(std::size_t k) { return *components_[k]; }

  /// Probabilities; must be nonnegative, sum to 1 within 1e-12 and not all zero.
  void set_weights(const std::vector<double>& weights);
  Eigen::VectorXd weights() const;
  /// log w as a (1 x K) tensor tied to the logits parameter.
  Tensor log_weights() const;

  Param& logits() { return logits_; }
  const Param& logits() const { return logits_; }
  std::vector<Param*> component_parameters();

 private:
  std::vector<std::unique_ptr<Density>> components_;
  Param logits_;
};

/// log sum_k w_k exp(log p_k(x)) by log-sum-exp, (n x d) -> (n x 1).
Tensor mixture_log_prob(const Tensor& x, const Mixture& m);
/// Per-component log w_k + log p_k(x), (n x K).
Tensor mixture_joint_log_prob(const Tensor& x, const Mixture& m);

struct MixtureDraw {
  std::vector<double> x;
  std::size_t component = 0;
};
MixtureDraw mixture_sample(const Mixture& m, Rng& rng);
/// n draws as rows; component indices written to `components` when given.
Matrix mixture_sample_rows(const Mixture& m, Eigen::Index n, Rng& rng,
                           std::vector<std::size_t>* components = nullptr);

}  // namespace gcrl
