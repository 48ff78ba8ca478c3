#include "gcrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace gcrl {
namespace {

void check_traj(const Matrix& preds, const Matrix& gts, const char* who) {
  if (preds.rows() != gts.rows() || preds.cols() != gts.cols()) {
    throw ng::ShapeError(std::string(who) + ": shape mismatch");
  }
  if (preds.rows() == 0 || preds.cols() == 0 || preds.cols() % 2 != 0) {
    throw ng::ShapeError(std::string(who) + ": expected (agents x 2T) with T >= 1");
  }
}

double step_error(const Matrix& p, const Matrix& g, Eigen::Index pi, Eigen::Index gi, Eigen::Index t) {
  return std::hypot(p(pi, 2 * t) - g(gi, 2 * t), p(pi, 2 * t + 1) - g(gi, 2 * t + 1));
}

double row_ade(const Matrix& p, const Matrix& g, Eigen::Index pi, Eigen::Index gi) {
  const Eigen::Index T = g.cols() / 2;
  double acc = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) acc += step_error(p, g, pi, gi, t);
  return acc / static_cast<double>(T);
}

}  // namespace

double ade(const Matrix& preds, const Matrix& gts) {
  check_traj(preds, gts, "ade");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < gts.rows(); ++i) acc += row_ade(preds, gts, i, i);
  return acc / static_cast<double>(gts.rows());
}

double fde(const Matrix& preds, const Matrix& gts) {
  check_traj(preds, gts, "fde");
  const Eigen::Index last = gts.cols() / 2 - 1;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < gts.rows(); ++i) acc += step_error(preds, gts, i, i, last);
  return acc / static_cast<double>(gts.rows());
}

Matrix select_best_of_n(const Matrix& samples, const Matrix& gts) {
  const Eigen::Index n = gts.rows();
  if (n == 0 || samples.cols() != gts.cols() || samples.rows() % n != 0 || samples.rows() == 0) {
    throw ng::ShapeError("select_best_of_n: expected (N*n x 2T) samples for (n x 2T) truth");
  }
  const Eigen::Index N = samples.rows() / n;
  Matrix out(n, gts.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = i;
    double best_err = row_ade(samples, gts, i, i);
    for (Eigen::Index k = 1; k < N; ++k) {
      const double e = row_ade(samples, gts, k * n + i, i);
      if (e < best_err) {
        best_err = e;
        best = k * n + i;
      }
    }
    out.row(i) = samples.row(best);
  }
  return out;
}

DisplacementErrors best_of_n(const GcrlModel& model, std::span<const Scene> scenes, int n_samples,
                             Rng& rng, LatentSource source, std::size_t scenes_per_batch) {
  if (n_samples < 1) throw std::invalid_argument("best_of_n: N must be >= 1");
  if (scenes_per_batch == 0) throw std::invalid_argument("best_of_n: empty chunk size");
  DisplacementErrors out;
  double ade_sum = 0.0, fde_sum = 0.0;
  for (std::size_t start = 0; start < scenes.size(); start += scenes_per_batch) {
    auto chunk = scenes.subspan(start, std::min(scenes_per_batch, scenes.size() - start));
    Batch b = make_batch(chunk, model.config());
    Matrix samples = model.ancestral_predict(b, n_samples, rng, source);
    Matrix best = select_best_of_n(samples, b.future_pos);
    const double w = static_cast<double>(b.n);
    ade_sum += ade(best, b.future_pos) * w;
    fde_sum += fde(best, b.future_pos) * w;
    out.agents += static_cast<std::size_t>(b.n);
  }
  if (out.agents == 0) throw std::invalid_argument("best_of_n: no agents to evaluate");
  out.ade = ade_sum / static_cast<double>(out.agents);
  out.fde = fde_sum / static_cast<double>(out.agents);
  return out;
}

MccMode parse_mcc_mode(const std::string& s) {
  if (s == "weak") return MccMode::kWeak;
  if (s == "strong") return MccMode::kStrong;
  throw std::invalid_argument("unknown MCC mode '" + s + "'");
}

std::string to_string(MccMode m) { return m == MccMode::kWeak ? "weak" : "strong"; }

std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weight) {
  const int rows = static_cast<int>(weight.rows()), cols = static_cast<int>(weight.cols());
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  // Hungarian algorithm (potentials form) minimising cost = max - weight on a
  // square matrix padded with zero-weight entries.
  const double top = weight.size() ? weight.maxCoeff() : 0.0;
  auto cost = [&](int i, int j) {
    return (i < rows && j < cols) ? top - weight(i, j) : top;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    if (i < rows && j - 1 < cols) assign[static_cast<std::size_t>(i)] = j - 1;
  }
  return assign;
}

namespace {

std::vector<Eigen::Index> varying_columns(const Eigen::MatrixXd& m, const char* name,
                                          std::vector<std::string>* warnings) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const Eigen::VectorXd col = m.col(c).array() - m.col(c).mean();
    const double scale = std::max(1.0, m.col(c).cwiseAbs().maxCoeff());
    if (col.norm() > 1e-12 * scale * std::sqrt(static_cast<double>(m.rows()))) {
      keep.push_back(c);
    } else if (warnings) {
      warnings->push_back(std::string("mcc: column ") + std::to_string(c) + " of " + name +
                          " has zero variance and is excluded");
    }
  }
  return keep;
}

double strong_mcc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                  std::vector<std::string>* warnings) {
  auto ka = varying_columns(a, "a", warnings);
  auto kb = varying_columns(b, "b", warnings);
  if (ka.empty() || kb.empty()) throw std::invalid_argument("mcc: no non-degenerate columns");
  Eigen::MatrixXd corr(static_cast<Eigen::Index>(ka.size()), static_cast<Eigen::Index>(kb.size()));
  for (std::size_t i = 0; i < ka.size(); ++i) {
    const Eigen::VectorXd x = a.col(ka[i]).array() - a.col(ka[i]).mean();
    for (std::size_t j = 0; j < kb.size(); ++j) {
      const Eigen::VectorXd y = b.col(kb[j]).array() - b.col(kb[j]).mean();
      corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
    }
  }
  auto assign = max_weight_assignment(corr.cwiseAbs());
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < assign.size(); ++i) {
    if (assign[i] < 0) continue;
    acc += corr(static_cast<Eigen::Index>(i), assign[i]);
    ++count;
  }
  return acc / count;
}

}  // namespace

double mcc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, MccMode mode,
           std::vector<std::string>* warnings) {
  if (a.rows() != b.rows()) throw ng::ShapeError("mcc: row count mismatch");
  if (a.cols() < 1 || b.cols() < 1) throw ng::ShapeError("mcc: empty latent code");
  if (a.rows() <= std::max(a.cols(), b.cols())) {
    throw std::invalid_argument("mcc: need more samples than latent dimensions");
  }
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument("mcc: non-finite latent values");
  if (mode == MccMode::kStrong) return strong_mcc(a, b, warnings);

  Eigen::MatrixXd design(a.rows(), a.cols() + 1);
  design << a, Eigen::VectorXd::Ones(a.rows());
  const Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(b);
  return strong_mcc(design * coef, b, warnings);
}

LatentCodes posterior_means(const GcrlModel& model, std::span<const Scene> scenes,
                            std::size_t scenes_per_batch) {
  if (scenes_per_batch == 0) throw std::invalid_argument("posterior_means: empty chunk size");
  std::vector<Matrix> s_parts, z_parts;
  Eigen::Index total = 0;
  for (std::size_t start = 0; start < scenes.size(); start += scenes_per_batch) {
    auto chunk = scenes.subspan(start, std::min(scenes_per_batch, scenes.size() - start));
    Batch b = make_batch(chunk, model.config());
    Posteriors post = model.infer_posteriors(b);
    s_parts.push_back(post.q_s.mu.value());
    z_parts.push_back(post.q_z.mu.value());
    total += b.n;
  }
  LatentCodes out;
  const auto& cfg = model.config();
  out.s.resize(total, cfg.d_s);
  out.z.resize(total, cfg.d_z);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < s_parts.size(); ++k) {
    out.s.middleRows(row, s_parts[k].rows()) = s_parts[k];
    out.z.middleRows(row, z_parts[k].rows()) = z_parts[k];
    row += s_parts[k].rows();
  }
  return out;
}

void write_metrics_header(std::ostream& os) { os << "metric,value,env,alpha,msd,N,seed\n"; }

void write_metric_row(std::ostream& os, const MetricRow& r) {
  os << r.metric << ',' << r.value << ',' << r.env << ',' << r.alpha << ',' << r.msd << ',' << r.n
     << ',' << r.seed << '\n';
}

void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.precision(10);
  write_metrics_header(os);
  for (const auto& r : rows) write_metric_row(os, r);
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace gcrl
