#include "gcrl/objective.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace gcrl {

LossMode parse_loss_mode(const std::string& s) {
  if (s == "full") return LossMode::kFull;
  if (s == "variety") return LossMode::kVariety;
  if (s == "adaptation") return LossMode::kAdaptation;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::kFull: return "full";
    case LossMode::kVariety: return "variety";
    case LossMode::kAdaptation: return "adaptation";
  }
  return "?";
}

PredTerm LossConfig::pred_term() const {
  switch (mode) {
    case LossMode::kFull: return PredTerm::kLikelihood;
    case LossMode::kVariety: return PredTerm::kVariety;
    case LossMode::kAdaptation: return adaptation_pred;
  }
  return PredTerm::kLikelihood;
}

void LossConfig::validate() const {
  if (n_samples_qy < 1 || n_samples_sz < 1) {
    throw std::invalid_argument("LossConfig: sample counts must be >= 1");
  }
  if (pred_term() == PredTerm::kVariety) {
    if (n_samples_qy != 1) throw std::invalid_argument("LossConfig: variety loss requires n_samples_qy = 1");
    if (variety_n < 1) throw std::invalid_argument("LossConfig: variety_n must be >= 1");
  }
  if (!(weight_min > 0.0 && weight_min <= 1.0 && weight_max >= 1.0 && std::isfinite(weight_max))) {
    throw std::invalid_argument("LossConfig: weight clamp must satisfy 0 < w_min <= 1 <= w_max");
  }
}

Tensor log_mean_exp_samples(const Tensor& log_p, Eigen::Index n) {
  if (log_p.cols() != 1 || n < 1 || log_p.rows() % n != 0) {
    throw ng::ShapeError("log_mean_exp_samples: expected (N*n x 1)");
  }
  const Eigen::Index times = log_p.rows() / n;
  // Sample-major rows reshape to (N x n); transpose puts draws in columns.
  Tensor m = ng::transpose(ng::reshape(log_p, times, n));
  return ng::add_scalar(ng::logsumexp_rows(m), -std::log(static_cast<double>(times)));
}

Tensor importance_weights(const Tensor& log_p_y, const Tensor& log_q_hat, double w_min,
                          double w_max) {
  const Eigen::Index n = log_q_hat.rows();
  if (log_q_hat.cols() != 1 || log_p_y.cols() != 1 || n < 1 || log_p_y.rows() % n != 0) {
    throw ng::ShapeError("importance_weights: expected (N*n x 1) and (n x 1)");
  }
  const Eigen::Index times = log_p_y.rows() / n;
  Tensor rep = ng::gather_rows(log_q_hat, repeat_index(n, times));
  Tensor lw = ng::clamp(log_p_y - rep, std::log(w_min), std::log(w_max));
  return ng::exp(lw);
}

Tensor weighted_sample_mean(const Tensor& per_draw, const Tensor& w) {
  if (!w.defined()) return ng::mean(per_draw);
  return ng::mean(per_draw * w);
}

double variety_loss(const Matrix& samples, const Matrix& truth) {
  if (truth.rows() != 1 || samples.cols() != truth.cols() || samples.cols() % 2 != 0 ||
      samples.rows() < 1) {
    throw ng::ShapeError("variety_loss: expected (N x 2T) samples and (1 x 2T) truth");
  }
  const double steps = static_cast<double>(samples.cols() / 2);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < samples.rows(); ++k) {
    best = std::min(best, (samples.row(k) - truth).squaredNorm() / steps);
  }
  return best;
}

namespace {

// Runs one term and names it in any numeric failure.
Tensor guarded(const char* term, const std::function<Tensor()>& f) {
  Tensor t;
  try {
    t = f();
  } catch (const ng::NumericError& e) {
    throw ng::NumericError(std::string("loss term '") + term + "' is non-finite: " + e.what());
  }
  if (!t.value().allFinite()) {
    throw ng::NumericError(std::string("loss term '") + term + "' is non-finite");
  }
  return t;
}

ElboBreakdown objective(const GcrlModel& model, const Batch& batch, const LossConfig& cfg,
                        Rng& rng) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  const Eigen::Index n = batch.n;
  const int P = mc.pred_len;
  Posteriors post = model.infer_posteriors(batch);
  const Tensor y = Tensor::constant(batch.future_disp);

  // -log q(y|x): likelihood estimate, or best-of-N on positions.
  Tensor log_q_hat;
  Tensor pred = guarded("pred", [&] {
    if (cfg.pred_term() == PredTerm::kLikelihood) {
      auto idx = repeat_index(n, cfg.n_samples_qy);
      LatentSample ls = model.sample_posteriors(post, cfg.n_samples_qy, rng);
      DiagGaussian py = model.decode_future(ng::gather_rows(post.features, idx), ls);
      Tensor lq = log_mean_exp_samples(gaussian_log_prob(ng::gather_rows(y, idx), py), n);
      log_q_hat = lq;
      return ng::neg(ng::mean(lq));
    }
    // Best-of-N without a graph, then the winning draws again with one.
    const int N = cfg.variety_n;
    auto idx = repeat_index(n, N);
    auto [eps_s, eps_z] = model.draw_noise(n * N, rng);
    std::vector<Eigen::Index> best(static_cast<std::size_t>(n));
    {
      ng::NoGradGuard no_grad;
      LatentSample ls = model.latents_from_noise(post, idx, eps_s, eps_z);
      DiagGaussian py = model.decode_future(ng::gather_rows(post.features, idx), ls);
      const Matrix pos = model.displacements_to_positions(py.mu, batch.last_pos).value();
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index arg = i;
        double low = std::numeric_limits<double>::infinity();
        for (int k = 0; k < N; ++k) {
          const double e = (pos.row(k * n + i) - batch.future_pos.row(i)).squaredNorm();
          if (e < low) {
            low = e;
            arg = k * n + i;
          }
        }
        best[static_cast<std::size_t>(i)] = arg;
      }
    }
    std::vector<Eigen::Index> agent(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) agent[static_cast<std::size_t>(i)] = i;
    Matrix bs = eps_s.size() ? Matrix(eps_s(best, Eigen::all)) : Matrix();
    Matrix bz = eps_z.size() ? Matrix(eps_z(best, Eigen::all)) : Matrix();
    LatentSample ls = model.latents_from_noise(post, agent, bs, bz);
    DiagGaussian py = model.decode_future(post.features, ls);
    Tensor pos = model.displacements_to_positions(py.mu, batch.last_pos);
    Tensor err = ng::scale(ng::row_sum(ng::square(pos - Tensor::constant(batch.future_pos))), 1.0 / P);
    return ng::mean(err);
  });

  // Expectation over q(s|x) q(z|x), importance weighted by p(y|x,s,z) / q(y|x).
  const int M = cfg.n_samples_sz;
  auto idx = repeat_index(n, M);
  LatentSample ls = model.sample_posteriors(post, M, rng);
  Tensor w;
  if (cfg.pred_term() == PredTerm::kLikelihood && cfg.n_samples_qy > 1) {
    w = guarded("importance_weight", [&] {
      DiagGaussian py = model.decode_future(ng::gather_rows(post.features, idx), ls);
      Tensor lp = gaussian_log_prob(ng::gather_rows(y, idx), py);
      return importance_weights(lp, log_q_hat, cfg.weight_min, cfg.weight_max);
    });
  }

  ElboBreakdown out;
  Tensor total = pred;
  out.pred = pred.item();
  if (cfg.use_recon) {
    Tensor r = guarded("recon", [&] {
      Tensor target = ng::gather_rows(Tensor::constant(batch.recon_target), idx);
      return weighted_sample_mean(ng::neg(gaussian_log_prob(target, model.reconstruct_past(ls))), w);
    });
    out.recon = r.item();
    total = total + r;
  }
  if (mc.uses_s()) {
    Tensor k = guarded("kl_s", [&] {
      Tensor lq = gaussian_log_prob(ls.s, repeat_rows(post.q_s, M));
      return weighted_sample_mean(lq - model.prior_s_log_prob(ls.s), w);
    });
    out.kl_s = k.item();
    total = total + k;
  }
  if (mc.uses_z()) {
    Tensor k = guarded("kl_z", [&] {
      Tensor lq = gaussian_log_prob(ls.z, repeat_rows(post.q_z, M));
      return weighted_sample_mean(lq - model.prior_z_log_prob(ls.z), w);
    });
    out.kl_z = k.item();
    if (cfg.mode != LossMode::kAdaptation) total = total + k;
  }
  out.total = total;
  return out;
}

}  // namespace

ElboBreakdown elbo_loss(const GcrlModel& model, const Batch& batch, const LossConfig& cfg,
                        Rng& rng) {
  return objective(model, batch, cfg, rng);
}

ElboBreakdown adaptation_loss(const GcrlModel& model, const Batch& batch, const LossConfig& cfg,
                              Rng& rng) {
  const GradScope scope = model.grad_scope();
  if (scope != GradScope::kAdaptable && scope != GradScope::kWeightsOnly) {
    throw std::logic_error("adaptation_loss: model must be in an adaptation gradient scope");
  }
  LossConfig c = cfg;
  c.mode = LossMode::kAdaptation;
  return objective(model, batch, c, rng);
}

}  // namespace gcrl
