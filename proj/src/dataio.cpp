#include "gcrl/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gcrl {

CoordMode parse_coord_mode(const std::string& s) {
  if (s == "relative" || s == "d_rel") return CoordMode::kRelative;
  if (s == "absolute" || s == "l_abs") return CoordMode::kAbsolute;
  throw std::invalid_argument("unknown coordinate mode '" + s + "'");
}

std::string to_string(CoordMode m) { return m == CoordMode::kRelative ? "relative" : "absolute"; }

void Scene::validate() const {
  if (num_agents < 1) throw std::invalid_argument("Scene: needs at least one agent");
  if (xy.size() != static_cast<std::size_t>(num_agents * num_steps * 2)) {
    throw std::invalid_argument("Scene: position buffer size mismatch");
  }
  if (!sigma.empty() && sigma.size() != static_cast<std::size_t>(num_agents * num_steps)) {
    throw std::invalid_argument("Scene: noise buffer size mismatch");
  }
  for (double v : xy) {
    if (!std::isfinite(v)) throw std::invalid_argument("Scene: non-finite coordinate");
  }
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

void append_double(std::string& s, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, ptr);
}

}  // namespace

Tracks parse_trajectories(std::istream& in, const std::string& source) {
  Tracks tracks;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::vector<double> cols;
    std::string tok;
    while (ls >> tok) {
      double v;
      if (!parse_double(tok, v)) {
        throw DataError(source + ":" + std::to_string(line_no) + ": malformed value '" + tok + "'");
      }
      cols.push_back(v);
    }
    if (cols.size() < 4 || cols.size() > 5) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected 4 or 5 columns, got " +
                      std::to_string(cols.size()));
    }
    if (cols[1] != std::round(cols[1])) {
      throw DataError(source + ":" + std::to_string(line_no) + ": non-integer pedestrian id");
    }
    TrackPoint p{cols[0], cols[2], cols[3], std::nullopt};
    if (cols.size() == 5) p.sigma = cols[4];
    tracks[static_cast<std::int64_t>(cols[1])].push_back(p);
  }
  for (auto& [id, track] : tracks) {
    std::stable_sort(track.begin(), track.end(),
                     [](const TrackPoint& a, const TrackPoint& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < track.size(); ++i) {
      if (track[i].frame == track[i - 1].frame) {
        throw DataError(source + ": pedestrian " + std::to_string(id) +
                        " has non-monotone frames (duplicate frame " +
                        std::to_string(track[i].frame) + ")");
      }
    }
  }
  return tracks;
}

Tracks load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_trajectories(in, path.string());
}

std::vector<Scene> window_scenes(const Tracks& tracks, int env_id, int scene_len,
                                 int max_agents) {
  if (scene_len < 1 || max_agents < 1) throw std::invalid_argument("window_scenes: bad sizes");
  std::set<double> frame_set;
  for (const auto& [id, track] : tracks)
    for (const auto& p : track) frame_set.insert(p.frame);
  std::vector<double> frames(frame_set.begin(), frame_set.end());
  std::unordered_map<double, int> frame_index;
  for (std::size_t i = 0; i < frames.size(); ++i) frame_index[frames[i]] = static_cast<int>(i);

  // For every pedestrian, each maximal run of consecutive frame indices of
  // length L contributes windows at starts [run_start, run_start + L - scene_len].
  struct Member {
    std::int64_t ped;
    std::size_t offset;  // index into the track of the window's first frame
  };
  std::map<int, std::vector<Member>> by_start;
  for (const auto& [id, track] : tracks) {
    std::size_t run_begin = 0;
    for (std::size_t i = 1; i <= track.size(); ++i) {
      bool breaks = i == track.size() ||
                    frame_index[track[i].frame] != frame_index[track[i - 1].frame] + 1;
      if (!breaks) continue;
      const std::size_t len = i - run_begin;
      if (len >= static_cast<std::size_t>(scene_len)) {
        for (std::size_t off = run_begin; off + scene_len <= i; ++off) {
          by_start[frame_index[track[off].frame]].push_back({id, off});
        }
      }
      run_begin = i;
    }
  }

  std::vector<Scene> scenes;
  for (const auto& [start, members] : by_start) {
    for (std::size_t first = 0; first < members.size(); first += max_agents) {
      const int m = static_cast<int>(std::min<std::size_t>(max_agents, members.size() - first));
      Scene s(env_id, m, scene_len);
      bool any_sigma = true;
      for (int a = 0; a < m; ++a) {
        const auto& mem = members[first + a];
        const auto& track = tracks.at(mem.ped);
        for (int t = 0; t < scene_len; ++t) {
          const auto& p = track[mem.offset + t];
          s.x(a, t) = p.x;
          s.y(a, t) = p.y;
          any_sigma = any_sigma && p.sigma.has_value();
        }
      }
      if (any_sigma) {
        s.sigma.resize(static_cast<std::size_t>(m * scene_len));
        for (int a = 0; a < m; ++a) {
          const auto& mem = members[first + a];
          const auto& track = tracks.at(mem.ped);
          for (int t = 0; t < scene_len; ++t) s.noise(a, t) = *track[mem.offset + t].sigma;
        }
      }
      scenes.push_back(std::move(s));
    }
  }
  return scenes;
}

void write_scenes_tsv(std::ostream& out, const std::vector<Scene>& scenes,
                      const std::vector<std::string>& header) {
  for (const auto& h : header) out << "# " << h << '\n';
  std::int64_t ped = 0;
  std::string row;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const auto frame0 = static_cast<std::int64_t>(i) * s.num_steps;
    for (int t = 0; t < s.num_steps; ++t) {
      for (int a = 0; a < s.num_agents; ++a) {
        row.clear();
        row += std::to_string(frame0 + t);
        row += '\t';
        row += std::to_string(ped + a);
        row += '\t';
        append_double(row, s.x(a, t));
        row += '\t';
        append_double(row, s.y(a, t));
        if (s.has_noise()) {
          row += '\t';
          append_double(row, s.noise(a, t));
        }
        row += '\n';
        out << row;
      }
    }
    ped += s.num_agents;
  }
}

Displacements to_relative(const Scene& scene) {
  Displacements d;
  d.num_agents = scene.num_agents;
  d.num_steps = scene.num_steps;
  for (int a = 0; a < scene.num_agents; ++a) {
    d.origin.push_back(scene.x(a, 0));
    d.origin.push_back(scene.y(a, 0));
    for (int t = 1; t < scene.num_steps; ++t) {
      d.delta.push_back(scene.x(a, t) - scene.x(a, t - 1));
      d.delta.push_back(scene.y(a, t) - scene.y(a, t - 1));
    }
  }
  return d;
}

Scene to_absolute(const Displacements& d, int env_id) {
  Scene s(env_id, d.num_agents, d.num_steps);
  std::size_t k = 0;
  for (int a = 0; a < d.num_agents; ++a) {
    double x = d.origin[2 * a], y = d.origin[2 * a + 1];
    s.x(a, 0) = x;
    s.y(a, 0) = y;
    for (int t = 1; t < d.num_steps; ++t) {
      x += d.delta[k++];
      y += d.delta[k++];
      s.x(a, t) = x;
      s.y(a, t) = y;
    }
  }
  return s;
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  std::string line;
  long line_no = 0;
  auto resolve = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw DataError("manifest:" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key == "coord_mode") {
      m.coord_mode = parse_coord_mode(value);
    } else if (key == "obs_len") {
      m.obs_len = std::stoi(value);
    } else if (key == "pred_len") {
      m.pred_len = std::stoi(value);
    } else if (key == "frame_period") {
      m.frame_period = std::stod(value);
    } else if (key.rfind("env.", 0) == 0) {
      std::string rest = key.substr(4);
      if (rest.size() > 4 && rest.compare(rest.size() - 4, 4, ".val") == 0) {
        m.envs[rest.substr(0, rest.size() - 4)].val = resolve(value);
      } else {
        m.envs[rest].train = resolve(value);
      }
    } else {
      throw DataError("manifest:" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (m.obs_len <= 0 || m.pred_len <= 0) throw DataError("manifest: obs/pred lengths must be positive");
  for (const auto& [name, files] : m.envs) {
    if (files.train.empty()) throw DataError("manifest: env '" + name + "' has no data file");
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

std::vector<std::string> leave_one_out_envs(const DatasetManifest& manifest,
                                            const std::string& test_env) {
  if (!manifest.envs.count(test_env)) {
    throw std::invalid_argument("leave_one_out: unknown environment '" + test_env + "'");
  }
  std::vector<std::string> train;
  for (const auto& [name, files] : manifest.envs) {  // std::map: alphabetical
    if (name != test_env) train.push_back(name);
  }
  if (train.empty()) throw std::invalid_argument("leave_one_out: no training environments left");
  return train;
}

std::vector<Scene> load_scenes(const std::filesystem::path& path, int env_id) {
  return window_scenes(load_trajectories(path), env_id);
}

LeaveOneOutSplit leave_one_out(const DatasetManifest& manifest, const std::string& test_env) {
  const int len = manifest.obs_len + manifest.pred_len;
  LeaveOneOutSplit split;
  split.train_envs = leave_one_out_envs(manifest, test_env);
  split.test_env = test_env;
  for (std::size_t k = 0; k < split.train_envs.size(); ++k) {
    const auto& files = manifest.envs.at(split.train_envs[k]);
    const int env_id = static_cast<int>(k);
    auto scenes = window_scenes(load_trajectories(files.train), env_id, len);
    if (files.val) {
      auto val = window_scenes(load_trajectories(*files.val), env_id, len);
      split.val.insert(split.val.end(), val.begin(), val.end());
    } else {
      const std::size_t n_val = scenes.size() / 10;
      split.val.insert(split.val.end(), scenes.end() - static_cast<long>(n_val), scenes.end());
      scenes.resize(scenes.size() - n_val);
    }
    split.train.insert(split.train.end(), scenes.begin(), scenes.end());
  }
  const int test_id = static_cast<int>(split.train_envs.size());
  split.test = window_scenes(load_trajectories(manifest.envs.at(test_env).train), test_id, len);
  return split;
}

}  // namespace gcrl
