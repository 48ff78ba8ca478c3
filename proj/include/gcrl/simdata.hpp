#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcrl/scene.hpp"

namespace gcrl {

/// Circle-crossing generator parameters. msd is the only knob that differs
/// between domains.
struct SimConfig {
  double msd = 0.1;
  int n_agents = 5;
  double radius = 4.0;
  double speed = 1.0;
  double dt = 0.4;
  double jitter_deg = 10.0;
  int max_steps = 60;
  int count_train = 10000;
  int count_val = 3000;
  int count_test = 5000;

  void validate() const;
};

/// Standard domain recipe: msd in {0.1, 0.2, ..., 0.8}.
std::vector<double> standard_msd_domains();

/// Agents start equally spaced (with angular jitter) on a randomly rotated
/// circle and head for the antipodal point. Each step combines goal seeking
/// with a short-range repulsion inside 2*msd, then every agent's step is
/// scaled back until no pair is closer than msd. The returned window has
/// kSceneLen steps centred on the crossing.
Scene simulate_scene(const SimConfig& cfg, std::uint64_t seed);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
int split_count(const SimConfig& cfg, Split s);

/// Scenes of one split; scene i uses seed derive_seed(derive_seed(seed, split), i).
std::vector<Scene> simulate_split(const SimConfig& cfg, std::uint64_t seed, Split split);

/// Writes train.tsv / val.tsv / test.tsv into dir (created if missing).
void generate_domain(const SimConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir);

/// Directory name used for a domain, e.g. "msd_0.3".
std::string domain_dir_name(double msd);

struct NoiseConfig {
  double alpha = 1.0;
  int window = 8;
};

/// Appends sigma_t = alpha * (gamma_t + 1) with
/// gamma_t = |v_{t+window} - v_t|^2 and v_t = p_{t+1} - p_t. Steps whose
/// window runs past the end reuse the last computable gamma.
Scene add_noise_channel(const Scene& scene, const NoiseConfig& nc);

/// Smallest pairwise distance over all steps (infinity for one agent).
double min_pairwise_distance(const Scene& scene);

}  // namespace gcrl
