#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcrl/model.hpp"
#include "gcrl/numgrad/optim.hpp"
#include "gcrl/objective.hpp"
#include "gcrl/simdata.hpp"

namespace gcrl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every hyperparameter of a run. Defaults follow the synthetic setting
/// ("synthetic" profile); `apply_profile` switches whole groups at once.
struct ExperimentConfig {
  std::string profile = "synthetic";
  std::uint64_t seed = 0;

  // Data. Synthetic domains live in data_dir/msd_<v>; a manifest switches to
  // real trajectory files with leave-one-out over `test_env`.
  std::string data_dir = "data";
  std::vector<double> train_msd{0.1, 0.3, 0.5};
  double test_msd = 0.6;
  std::string manifest;
  std::string test_env;
  /// Non-empty: noise channel on, alpha cycled over training scenes.
  std::vector<double> train_alpha;
  int noise_window = 8;
  SimConfig sim;

  ModelConfig model;
  LossConfig loss;

  ng::ScheduleKind schedule = ng::ScheduleKind::kConstant;
  double lr = 5e-3;
  double peak_lr = 5e-3;
  int epochs = 250;
  int batch_size = 64;  // scenes per step
  int val_n = 20;
  int eval_n = 100;

  int adapt_batches = 6;
  std::string adapt_scope = "adaptable";  // adaptable | gmm-weights-only
  int adapt_epochs = 100;
  double adapt_lr = 5e-3;
  LatentSource eval_source = LatentSource::kPosterior;

  void validate() const;
};

/// "synthetic" (full-scale defaults), "desk" (reduced synthetic scale) or "eth".
void apply_profile(ExperimentConfig& cfg, const std::string& profile);

/// Sets one key from its text form. Throws ConfigError on unknown keys or
/// malformed values.
void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// Flat key=value text; '#' starts a comment. A `profile` line is applied
/// before every other key regardless of position.
ExperimentConfig parse_config(std::istream& in, const std::string& source);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Resolved snapshot: every key with a value that parses back bit-exactly.
std::string to_text(const ExperimentConfig& cfg);

std::string format_double(double v);
std::vector<double> parse_double_list(const std::string& s);

}  // namespace gcrl
