#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gcrl/distributions.hpp"
#include "gcrl/flows.hpp"
#include "gcrl/scene.hpp"

namespace gcrl {

/// Which latents feed the decoder and reconstructor (ablations keep one).
enum class LatentUse { kBoth, kSOnly, kZOnly };
LatentUse parse_latent_use(const std::string& s);
std::string to_string(LatentUse u);

struct ModelConfig {
  int obs_len = kObsLen;
  int pred_len = kPredLen;
  CoordMode coord_mode = CoordMode::kAbsolute;
  bool noise_channel = false;
  int hidden = 32;
  int d_s = 2;
  int d_z = 2;
  int n_cluster = 5;
  /// false: every flow prior becomes a Gaussian with learnable mean/log-variance.
  bool coupling_priors = true;
  int flow_layers = 4;
  int flow_hidden = 16;
  int decoder_hidden = 64;
  int recon_hidden = 64;
  double leaky_slope = 0.2;
  LatentUse latents = LatentUse::kBoth;
  /// false: output log-variances of p(y|x,s,z) and p(x|s,z) are fixed at 0.
  bool learn_output_var = false;

  bool uses_s() const { return latents != LatentUse::kZOnly; }
  bool uses_z() const { return latents != LatentUse::kSOnly; }
  int input_dim() const { return noise_channel ? 5 : 4; }
  void validate() const;
};

/// Parameter groups. The z-branch is {kHeadZ, kPriorZ}; everything else is
/// the adaptable set (the shared encoder included).
enum class ParamGroup {
  kEncoder,
  kHeadS,
  kHeadZ,
  kDecoder,
  kReconstructor,
  kPriorS,
  kPriorSWeights,
  kPriorZ,
};
const char* to_string(ParamGroup g);
bool is_z_branch(ParamGroup g);

/// Which groups may receive gradients.
///   kTrain: all groups except the fixed mixture weights p(e);
///   kAdaptable: the adaptable set including p(e);
///   kWeightsOnly: only the mixture weights;
///   kNone: nothing (evaluation).
enum class GradScope { kTrain, kAdaptable, kWeightsOnly, kNone };
bool scope_allows(GradScope scope, ParamGroup g);

struct ParamRef {
  Param* param;
  ParamGroup group;
};

/// Model-ready tensors for a set of scenes; agents are rows.
struct Batch {
  Eigen::Index n = 0;
  std::vector<Matrix> steps;  // obs_len entries, (n x input_dim): [dx, dy, px, py, (sigma)]
  Matrix pool;                // (n x n) mean over co-agents of the same scene
  Matrix recon_target;        // (n x 2*obs_len) positions in the coordinate mode
  Matrix future_disp;         // (n x 2*pred_len)
  Matrix future_pos;          // (n x 2*pred_len) absolute
  Matrix last_pos;            // (n x 2)
  std::vector<int> env_id;
  std::vector<int> scene_of;
};

Batch make_batch(std::span<const Scene> scenes, const ModelConfig& cfg);

struct Linear {
  Param w;
  Param b;
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, const std::string& prefix, Rng& rng);
  Tensor operator()(const Tensor& x) const { return ng::affine(x, w.use(), b.use()); }
  void zero();
};

struct Posteriors {
  Tensor features;  // (n x 2H): own hidden state, mean of co-agent hidden states
  DiagGaussian q_s;
  DiagGaussian q_z;
};

struct LatentSample {
  Tensor s;  // undefined when the model does not use S
  Tensor z;  // undefined when the model does not use Z
};

enum class LatentSource { kPosterior, kPrior };

class GcrlModel {
 public:
  GcrlModel(const ModelConfig& cfg, std::uint64_t seed);
  GcrlModel(const GcrlModel&) = delete;
  GcrlModel& operator=(const GcrlModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  /// Every trainable tensor exactly once, with its partition group.
  std::vector<ParamRef> params();
  std::vector<Tensor> trainable(GradScope scope);
  void set_grad_scope(GradScope scope);
  GradScope grad_scope() const { return scope_; }

  std::map<std::string, Matrix> state() ;
  void load_state(const std::map<std::string, Matrix>& state);

  Posteriors infer_posteriors(const Batch& batch) const;
  /// Gaussian over flattened future displacements; `features` rows must match
  /// the latent rows (repeat with gather_rows for multiple draws).
  DiagGaussian decode_future(const Tensor& features, const LatentSample& ls) const;
  /// Gaussian over the 2*obs_len reconstruction target.
  DiagGaussian reconstruct_past(const LatentSample& ls) const;

  Tensor prior_s_log_prob(const Tensor& s) const { return mixture_log_prob(s, prior_s_); }
  Tensor prior_z_log_prob(const Tensor& z) const { return prior_z_->log_prob(z); }
  Mixture& prior_s() { return prior_s_; }
  const Mixture& prior_s() const { return prior_s_; }
  Density& prior_z() { return *prior_z_; }

  /// Posterior draws for `times` copies of every agent, sample-major rows.
  LatentSample sample_posteriors(const Posteriors& post, Eigen::Index times, Rng& rng) const;
  /// Standard-normal noise for `rows` latent draws, in the order
  /// sample_posteriors consumes it (s block, then z block; unused blocks empty).
  std::pair<Matrix, Matrix> draw_noise(Eigen::Index rows, Rng& rng) const;
  /// Reparameterised draws from given noise; `agent` maps each row to its posterior row.
  LatentSample latents_from_noise(const Posteriors& post, std::span<const Eigen::Index> agent,
                                  const Matrix& eps_s, const Matrix& eps_z) const;

  /// Absolute positions from displacement means: last_pos + cumsum.
  Tensor displacements_to_positions(const Tensor& disp, const Matrix& last_pos) const;

  /// N trajectories per agent as rows k*n + i, (N*n x 2*pred_len) absolute
  /// positions, read out from the decoder mean.
  Matrix ancestral_predict(const Batch& batch, int n_samples, Rng& rng,
                           LatentSource source = LatentSource::kPosterior) const;

  /// log (1/N) sum_i p(y | x, s_i, z_i) per agent at the ground-truth future.
  Eigen::VectorXd log_q_y_given_x(const Batch& batch, int n_samples, Rng& rng) const;

  Linear& head_s() { return head_s_; }
  Linear& head_z() { return head_z_; }
  std::vector<Linear>& decoder_layers() { return decoder_; }
  std::vector<Linear>& recon_layers() { return recon_; }

 private:
  Tensor encode(const Batch& batch) const;
  Tensor mlp(const std::vector<Linear>& layers, const Tensor& x) const;

  ModelConfig cfg_;
  GradScope scope_ = GradScope::kTrain;
  // Encoder: single-layer GRU.
  Param gru_w_ih_, gru_w_hh_, gru_b_ih_, gru_b_hh_;
  Linear head_s_, head_z_;
  std::vector<Linear> decoder_;
  std::vector<Linear> recon_;
  Mixture prior_s_;
  std::unique_ptr<Density> prior_z_;
  Matrix cumsum_;
};

}  // namespace gcrl
