#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gcrl/model.hpp"

namespace gcrl {

/// Trajectories are (agents x 2T) with columns x0, y0, x1, y1, ...
/// Mean Euclidean error over agents and all predicted steps.
double ade(const Matrix& preds, const Matrix& gts);
/// Mean Euclidean error at the last step.
double fde(const Matrix& preds, const Matrix& gts);

struct DisplacementErrors {
  double ade = 0.0;
  double fde = 0.0;
  std::size_t agents = 0;
};

/// Per agent, the sample with the smallest ADE out of `samples` rows k*n + i.
/// Returns the selected trajectories (n x 2T).
Matrix select_best_of_n(const Matrix& samples, const Matrix& gts);

/// Best-of-N ADE/FDE over every agent of `scenes`, evaluated in chunks of
/// `scenes_per_batch` scenes.
DisplacementErrors best_of_n(const GcrlModel& model, std::span<const Scene> scenes, int n_samples,
                             Rng& rng, LatentSource source = LatentSource::kPosterior,
                             std::size_t scenes_per_batch = 64);

enum class MccMode { kWeak, kStrong };
MccMode parse_mcc_mode(const std::string& s);
std::string to_string(MccMode m);

/// Maximum-weight one-to-one assignment on a (rows x cols) weight matrix.
/// Returns, for each row, the assigned column or -1 when rows > cols.
std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weight);

/// Mean correlation coefficient between two latent codes (n x d). Strong:
/// Pearson correlations between the columns, the assignment maximising the
/// sum of |corr|, and the mean signed correlation along it. Weak: the same
/// after the least-squares affine map from `a` onto `b`. Zero-variance
/// columns are dropped; a note is appended to `warnings` when given.
double mcc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, MccMode mode,
           std::vector<std::string>* warnings = nullptr);

/// Posterior means of S and Z for every agent of `scenes`.
struct LatentCodes {
  Eigen::MatrixXd s;
  Eigen::MatrixXd z;
};
LatentCodes posterior_means(const GcrlModel& model, std::span<const Scene> scenes,
                            std::size_t scenes_per_batch = 64);

struct MetricRow {
  std::string metric;
  double value = 0.0;
  std::string env;
  double alpha = 0.0;  // 0 when no noise channel
  double msd = 0.0;    // 0 for non-synthetic data
  int n = 0;           // best-of-N; 0 when not applicable
  std::uint64_t seed = 0;
};

void write_metrics_header(std::ostream& os);
void write_metric_row(std::ostream& os, const MetricRow& row);
void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows);

}  // namespace gcrl
