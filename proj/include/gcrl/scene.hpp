#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gcrl {

inline constexpr int kObsLen = 8;
inline constexpr int kPredLen = 12;
inline constexpr int kSceneLen = kObsLen + kPredLen;
inline constexpr double kFramePeriod = 0.4;

/// How positions are presented to the model and the reconstruction target:
/// relative to the first observed position, or absolute.
enum class CoordMode { kRelative, kAbsolute };

CoordMode parse_coord_mode(const std::string& s);
std::string to_string(CoordMode m);

/// Co-present agents over one window. Positions are meters, stored
/// agent-major as [agent][step][x, y]; sigma is the optional noise channel
/// stored as [agent][step].
struct Scene {
  int env_id = 0;
  int num_agents = 0;
  int num_steps = kSceneLen;
  std::vector<double> xy;
  std::vector<double> sigma;

  Scene() = default;
  Scene(int env, int agents, int steps = kSceneLen)
      : env_id(env), num_agents(agents), num_steps(steps),
        xy(static_cast<std::size_t>(agents) * static_cast<std::size_t>(steps) * 2, 0.0) {}

  bool has_noise() const { return !sigma.empty(); }

  double& x(int a, int t) { return xy[index(a, t)]; }
  double& y(int a, int t) { return xy[index(a, t) + 1]; }
  double x(int a, int t) const { return xy[index(a, t)]; }
  double y(int a, int t) const { return xy[index(a, t) + 1]; }
  double& noise(int a, int t) { return sigma[static_cast<std::size_t>(a * num_steps + t)]; }
  double noise(int a, int t) const { return sigma[static_cast<std::size_t>(a * num_steps + t)]; }

  /// Throws if the scene violates its shape or finiteness invariants.
  void validate() const;

 private:
  std::size_t index(int a, int t) const {
    return (static_cast<std::size_t>(a) * static_cast<std::size_t>(num_steps) +
            static_cast<std::size_t>(t)) * 2;
  }
};

}  // namespace gcrl
