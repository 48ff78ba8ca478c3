#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gcrl/scene.hpp"

namespace gcrl {

/// Malformed input; the message carries the source name and line number.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrackPoint {
  double frame = 0.0;
  double x = 0.0;
  double y = 0.0;
  std::optional<double> sigma;
};

/// Per-pedestrian, frame-sorted tracks keyed by pedestrian id.
using Tracks = std::map<std::int64_t, std::vector<TrackPoint>>;

/// Reads `frame_id  ped_id  x  y [sigma]` rows (tab or space separated).
/// Blank lines and lines starting with '#' are skipped. Rows may appear in
/// any order; a repeated (ped, frame) pair is an error.
Tracks load_trajectories(const std::filesystem::path& path);
Tracks parse_trajectories(std::istream& in, const std::string& source);

/// Stride-1 windows of `scene_len` consecutive frames (over the sorted set
/// of distinct frames). A pedestrian joins a window only if present in every
/// frame of it; windows with more than max_agents are split.
std::vector<Scene> window_scenes(const Tracks& tracks, int env_id, int scene_len = kSceneLen,
                                 int max_agents = 32);

/// Writes scenes back-to-back: scene i occupies frames [i*T, (i+1)*T) and
/// every agent gets a fresh ped id. Header lines are emitted as "# line".
void write_scenes_tsv(std::ostream& out, const std::vector<Scene>& scenes,
                      const std::vector<std::string>& header = {});

/// Per-agent origin plus per-step displacements p_t - p_{t-1}.
struct Displacements {
  int num_agents = 0;
  int num_steps = 0;
  std::vector<double> origin;  // [agent][2]
  std::vector<double> delta;   // [agent][step-1][2]
};
Displacements to_relative(const Scene& scene);
Scene to_absolute(const Displacements& d, int env_id = 0);

struct EnvFiles {
  std::filesystem::path train;
  std::optional<std::filesystem::path> val;
};

/// Plain-text key=value manifest:
///   coord_mode=relative|absolute, obs_len, pred_len, frame_period,
///   env.<name>=<path>, env.<name>.val=<path>
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::map<std::string, EnvFiles> envs;
  CoordMode coord_mode = CoordMode::kRelative;
  int obs_len = kObsLen;
  int pred_len = kPredLen;
  double frame_period = kFramePeriod;
};
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir);

struct LeaveOneOutSplit {
  std::vector<std::string> train_envs;  // index = env_id
  std::string test_env;
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
};

/// Holds out `test_env`; the others become training environments with ids
/// 0..K-2 in alphabetical order. Validation scenes come from env.<name>.val
/// files when given, otherwise from the last 10% of each training env.
LeaveOneOutSplit leave_one_out(const DatasetManifest& manifest, const std::string& test_env);

/// Training env names for `test_env` without loading any file.
std::vector<std::string> leave_one_out_envs(const DatasetManifest& manifest,
                                            const std::string& test_env);

/// Loads a TSV and windows it with the given env id.
std::vector<Scene> load_scenes(const std::filesystem::path& path, int env_id);

}  // namespace gcrl
