#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcrl/config.hpp"
#include "gcrl/eval.hpp"

namespace gcrl {

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
  std::vector<std::string> train_envs;
  std::string test_env;
};

/// Synthetic: data_dir/msd_<v>/{train,val}.tsv for every training msd (env id
/// = list position) and the test split of test_msd. Manifest: leave-one-out.
/// With train_alpha set, alpha is assigned to training scenes cyclically and
/// the val/test splits use the largest training alpha.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Scenes of one synthetic domain split, with optional noise channel.
std::vector<Scene> load_domain_split(const ExperimentConfig& cfg, double msd, Split split, int env_id);

/// Attaches the noise channel; alpha cycles through `alphas` scene by scene.
std::vector<Scene> with_noise(const std::vector<Scene>& scenes, const std::vector<double>& alphas,
                              int window);

struct EpochLog {
  int epoch = 0;
  double pred = 0.0;
  double recon = 0.0;
  double kl_s = 0.0;
  double kl_z = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double val_ade = 0.0;
};

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const EpochLog& row);

struct TrainResult {
  std::vector<EpochLog> epochs;
  double best_val_ade = 0.0;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam over the kTrain scope for cfg.epochs passes over shuffled batches of
/// cfg.batch_size scenes. After every epoch the validation best-of-val_n ADE
/// is measured; the model ends holding the parameters of the best epoch.
/// Throws ng::NumericError (naming the loss term) on divergence.
TrainResult train_model(GcrlModel& model, const std::vector<Scene>& train,
                        const std::vector<Scene>& val, const ExperimentConfig& cfg,
                        const EpochCallback& on_epoch = {});

struct AdaptResult {
  std::vector<EpochLog> epochs;
  std::size_t updated_scalars = 0;
  std::uint64_t z_hash_before = 0;
  std::uint64_t z_hash_after = 0;
};

class PartitionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Fine-tunes on the first adapt_batches * batch_size scenes of `scenes` for
/// adapt_epochs passes with adaptation_loss. Throws PartitionError when a
/// z-branch tensor changes.
AdaptResult adapt_model(GcrlModel& model, const std::vector<Scene>& scenes, const ExperimentConfig& cfg,
                        const EpochCallback& on_epoch = {});

GradScope parse_adapt_scope(const std::string& s);

}  // namespace gcrl
