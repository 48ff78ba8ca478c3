#include "gcrl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gcrl {
namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + kGolden));
}

std::uint64_t Rng::next_u64() { return mix64(key_ + kGolden * ++counter_); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(const Eigen::VectorXd& weights) {
  const double total = weights.sum();
  if (!(total > 0.0) || (weights.array() < 0.0).any()) {
    throw std::invalid_argument("categorical: weights must be nonnegative with positive sum");
  }
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    if (weights(k) <= 0.0) continue;
    last_positive = static_cast<std::size_t>(k);
    acc += weights(k);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

ng::Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  ng::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
  return m;
}

Rng Rng::fork(std::uint64_t stream) const { return Rng(mix64(key_ ^ derive_seed(stream, 1)), true); }

}  // namespace gcrl
