#include "gcrl/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "gcrl/dataio.hpp"
#include "gcrl/rng.hpp"

namespace gcrl {
namespace {

struct Vec2 {
  double x = 0.0, y = 0.0;
};
Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

bool clear_of_others(const std::vector<Vec2>& pos, std::size_t i, Vec2 candidate, double msd) {
  for (std::size_t j = 0; j < pos.size(); ++j) {
    if (j != i && norm(candidate - pos[j]) < msd) return false;
  }
  return true;
}

}  // namespace

void SimConfig::validate() const {
  if (!(msd > 0.0)) throw std::invalid_argument("SimConfig: msd must be positive");
  if (n_agents < 1) throw std::invalid_argument("SimConfig: n_agents must be >= 1");
  if (!(radius > 0.0) || !(speed > 0.0) || !(dt > 0.0)) {
    throw std::invalid_argument("SimConfig: radius, speed and dt must be positive");
  }
  if (radius <= msd * n_agents / std::numbers::pi) {
    throw std::invalid_argument("SimConfig: infeasible, radius must exceed msd*n_agents/pi");
  }
  if (max_steps < kSceneLen) throw std::invalid_argument("SimConfig: max_steps < scene length");
  if (count_train < 0 || count_val < 0 || count_test < 0) {
    throw std::invalid_argument("SimConfig: negative scene count");
  }
}

std::vector<double> standard_msd_domains() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
}

Scene simulate_scene(const SimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int n = cfg.n_agents;
  const double rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double jitter = cfg.jitter_deg * std::numbers::pi / 180.0;

  std::vector<Vec2> pos(n), goal(n);
  for (int i = 0; i < n; ++i) {
    double theta = rotation + 2.0 * std::numbers::pi * i / n + rng.uniform(-jitter, jitter);
    pos[i] = {cfg.radius * std::cos(theta), cfg.radius * std::sin(theta)};
    goal[i] = -1.0 * pos[i];
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (norm(pos[i] - pos[j]) < cfg.msd) {
        throw std::invalid_argument("simulate_scene: cannot place agents at least msd apart");
      }
    }
  }

  const double max_speed = 1.5 * cfg.speed;
  const double range = 2.0 * cfg.msd;
  std::vector<std::vector<Vec2>> history{pos};
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<Vec2> vel(n);
    for (int i = 0; i < n; ++i) {
      Vec2 to_goal = goal[i] - pos[i];
      double dist = norm(to_goal);
      Vec2 v{};
      if (dist > 1e-9) v = (std::min(cfg.speed, dist / cfg.dt) / dist) * to_goal;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        Vec2 away = pos[i] - pos[j];
        double d = norm(away);
        if (d >= range || d < 1e-12) continue;
        Vec2 u = (1.0 / d) * away;
        Vec2 side{-u.y, u.x};
        double mag = cfg.speed * (range - d) / range;
        v = v + mag * u + (0.5 * mag) * side;
      }
      double sp = norm(v);
      if (sp > max_speed) v = (max_speed / sp) * v;
      vel[i] = v;
    }
    // Sequential projection: every committed position keeps >= msd to all
    // others' latest positions, so the whole configuration stays feasible.
    for (int i = 0; i < n; ++i) {
      Vec2 full = pos[i] + cfg.dt * vel[i];
      if (clear_of_others(pos, i, full, cfg.msd)) {
        pos[i] = full;
        continue;
      }
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 40; ++it) {
        double mid = 0.5 * (lo + hi);
        if (clear_of_others(pos, i, pos[i] + (mid * cfg.dt) * vel[i], cfg.msd)) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      pos[i] = pos[i] + (lo * cfg.dt) * vel[i];
    }
    history.push_back(pos);
  }

  // Window centred on the step where agents are, on average, closest to the centre.
  int centre = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < history.size(); ++t) {
    double m = 0.0;
    for (const auto& p : history[t]) m += norm(p);
    if (m < best - 1e-12) {
      best = m;
      centre = static_cast<int>(t);
    }
  }
  const int last_start = static_cast<int>(history.size()) - kSceneLen;
  const int start = std::clamp(centre - kSceneLen / 2, 0, last_start);

  Scene scene(0, n);
  for (int a = 0; a < n; ++a) {
    for (int t = 0; t < kSceneLen; ++t) {
      scene.x(a, t) = history[start + t][a].x;
      scene.y(a, t) = history[start + t][a].y;
    }
  }
  return scene;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

int split_count(const SimConfig& cfg, Split s) {
  switch (s) {
    case Split::kTrain: return cfg.count_train;
    case Split::kVal: return cfg.count_val;
    case Split::kTest: return cfg.count_test;
  }
  return 0;
}

std::vector<Scene> simulate_split(const SimConfig& cfg, std::uint64_t seed, Split split) {
  cfg.validate();
  const std::uint64_t split_seed = derive_seed(seed, static_cast<std::uint64_t>(split) + 1);
  const int count = split_count(cfg, split);
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    scenes.push_back(simulate_scene(cfg, derive_seed(split_seed, static_cast<std::uint64_t>(i))));
  }
  return scenes;
}

std::string domain_dir_name(double msd) {
  std::ostringstream os;
  os.precision(1);
  os << std::fixed << "msd_" << msd;
  return os.str();
}

void generate_domain(const SimConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto scenes = simulate_split(cfg, seed, split);
    std::ostringstream meta;
    std::vector<std::string> header = {
        "generator=circle-crossing",
        "msd=" + std::to_string(cfg.msd),
        "n_agents=" + std::to_string(cfg.n_agents),
        "radius=" + std::to_string(cfg.radius),
        "speed=" + std::to_string(cfg.speed),
        "dt=" + std::to_string(cfg.dt),
        "jitter_deg=" + std::to_string(cfg.jitter_deg),
        "seed=" + std::to_string(seed),
        std::string("split=") + split_name(split),
        "scenes=" + std::to_string(scenes.size()),
    };
    auto path = dir / (std::string(split_name(split)) + ".tsv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_scenes_tsv(out, scenes, header);
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
}

Scene add_noise_channel(const Scene& scene, const NoiseConfig& nc) {
  if (!(nc.alpha > 0.0)) throw std::invalid_argument("add_noise_channel: alpha must be positive");
  if (nc.window < 1) throw std::invalid_argument("add_noise_channel: window must be >= 1");
  const int T = scene.num_steps;
  if (T < nc.window + 2) {
    throw std::invalid_argument("add_noise_channel: trajectory shorter than window + 2");
  }
  Scene out = scene;
  out.sigma.assign(static_cast<std::size_t>(scene.num_agents * T), 0.0);
  const int last_gamma = T - 2 - nc.window;
  for (int a = 0; a < scene.num_agents; ++a) {
    auto vx = [&](int t) { return scene.x(a, t + 1) - scene.x(a, t); };
    auto vy = [&](int t) { return scene.y(a, t + 1) - scene.y(a, t); };
    for (int t = 0; t < T; ++t) {
      const int tg = std::min(t, last_gamma);
      const double dx = vx(tg + nc.window) - vx(tg);
      const double dy = vy(tg + nc.window) - vy(tg);
      const double gamma = dx * dx + dy * dy;
      out.noise(a, t) = nc.alpha * (gamma + 1.0);
    }
  }
  return out;
}

double min_pairwise_distance(const Scene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < scene.num_steps; ++t) {
    for (int i = 0; i < scene.num_agents; ++i) {
      for (int j = i + 1; j < scene.num_agents; ++j) {
        best = std::min(best, std::hypot(scene.x(i, t) - scene.x(j, t),
                                         scene.y(i, t) - scene.y(j, t)));
      }
    }
  }
  return best;
}

}  // namespace gcrl
