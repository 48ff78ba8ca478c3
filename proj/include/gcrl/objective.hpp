#pragma once

#include <string>

#include "gcrl/model.hpp"

namespace gcrl {

enum class LossMode { kFull, kVariety, kAdaptation };
LossMode parse_loss_mode(const std::string& s);
std::string to_string(LossMode m);

/// How the -log q(y|x) term is formed in adaptation mode.
enum class PredTerm { kLikelihood, kVariety };

struct LossConfig {
  int n_samples_qy = 1;    // draws for q(y|x)
  int n_samples_sz = 10;   // draws for the expectation over q(s|x) q(z|x)
  int variety_n = 20;      // trajectories per agent for the variety loss
  LossMode mode = LossMode::kVariety;
  PredTerm adaptation_pred = PredTerm::kVariety;
  bool use_recon = true;
  double weight_min = 1e-3;
  double weight_max = 1e3;

  PredTerm pred_term() const;
  void validate() const;
};

/// Loss decomposition. `total` is differentiable; the other terms are the
/// importance-weighted Monte-Carlo estimates it is built from, averaged per
/// agent. total = pred + recon + kl_s + kl_z, minus kl_z in adaptation mode.
/// With n_samples_qy = 1 every weight is exactly 1.
struct ElboBreakdown {
  Tensor total;
  double pred = 0.0;
  double recon = 0.0;
  double kl_s = 0.0;
  double kl_z = 0.0;
  double total_value() const { return total.item(); }
};

/// Per-agent log-mean-exp over sample-major rows (k*n + i): (N*n x 1) -> (n x 1).
Tensor log_mean_exp_samples(const Tensor& log_p, Eigen::Index n);

/// w = p(y|x,s,z) / q_hat(y|x) per draw, computed in log space and clamped to
/// [w_min, w_max]. Gradients flow through both p and q_hat.
Tensor importance_weights(const Tensor& log_p_y, const Tensor& log_q_hat, double w_min,
                          double w_max);

/// Mean over all draws of w * term; plain mean when `w` is undefined.
Tensor weighted_sample_mean(const Tensor& per_draw, const Tensor& w);

/// Smallest mean squared per-step displacement error among the rows of
/// `samples` (N x 2T) against `truth` (1 x 2T).
double variety_loss(const Matrix& samples, const Matrix& truth);

/// Importance-weighted objective of the GCRL model (negated, to minimise).
ElboBreakdown elbo_loss(const GcrlModel& model, const Batch& batch, const LossConfig& cfg, Rng& rng);

/// The same objective without the Z regulariser. The model must be in the
/// kAdaptable or kWeightsOnly gradient scope so no gradient reaches the z-branch.
ElboBreakdown adaptation_loss(const GcrlModel& model, const Batch& batch, const LossConfig& cfg,
                              Rng& rng);

}  // namespace gcrl
