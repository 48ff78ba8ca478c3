#pragma once

#include <string>
#include <vector>

#include "gcrl/distributions.hpp"

namespace gcrl {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Affine coupling layer. Dimensions with mask 1 pass through unchanged and
/// condition the scale/shift applied to the remaining dimensions:
///   x = u * exp(s(u*m)) + t(u*m),  s, t zero on masked dims,
///   s = 2 * tanh(.) keeps the log-det bounded.
/// Final layers start at zero so a fresh layer is the identity.
class CouplingLayer {
 public:
  CouplingLayer(Eigen::RowVectorXd mask, Eigen::Index hidden, const std::string& prefix, Rng& rng);

  Eigen::Index dim() const { return mask_.size(); }
  const Eigen::RowVectorXd& mask() const { return mask_; }

  struct Output {
    Tensor y;
    Tensor log_det;  // (n x 1)
  };
  Output forward(const Tensor& u) const;
  Output inverse(const Tensor& x) const;

  std::vector<Param*> parameters();
  /// Re-draws every weight (including the zero-initialised output layers).
  void randomize(Rng& rng, double output_scale = 0.5);

 private:
  struct ScaleShift {
    Tensor s;
    Tensor t;
  };
  ScaleShift conditioner(const Tensor& masked_input) const;

  Eigen::RowVectorXd mask_;
  Param s_w1_, s_b1_, s_w2_, s_b2_;
  Param t_w1_, t_b1_, t_w2_, t_b2_;
};

/// Stack of coupling layers with alternating masks over a standard-normal base.
class FlowStack final : public Density {
 public:
  FlowStack(Eigen::Index dim, int layers, Eigen::Index hidden, const std::string& prefix, Rng& rng);

  Eigen::Index dim() const override { return dim_; }
  Tensor log_prob(const Tensor& x) const override;
  Matrix sample(Eigen::Index n, Rng& rng) const override;
  std::vector<Param*> parameters() override;
  std::unique_ptr<Density> clone() const override;

  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  void randomize(Rng& rng, double output_scale = 0.5);

 private:
  Eigen::Index dim_;
  std::vector<CouplingLayer> layers_;
};

struct FlowResult {
  Tensor x;
  Tensor log_det;  // (n x 1)
};

/// Base -> data direction with accumulated log|det J|.
FlowResult flow_forward(const Tensor& u, const FlowStack& f);
/// Data -> base direction; log_det is the inverse-map log-determinant.
FlowResult flow_inverse(const Tensor& x, const FlowStack& f);
/// Change of variables: log N(f^{-1}(x)) + log|det J_{f^{-1}}(x)|.
Tensor flow_log_prob(const Tensor& x, const FlowStack& f);

}  // namespace gcrl
