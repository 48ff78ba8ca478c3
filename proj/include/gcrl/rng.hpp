#pragma once

#include <cstdint>

#include "gcrl/numgrad/tensor.hpp"

namespace gcrl {

/// Finalizer of splitmix64; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// Stable seed derivation, e.g. per-scene seeds hash(seed, i).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Counter-based generator: the i-th draw is mix64(key + i * golden). Owned by
/// a run and passed explicitly to every sampling routine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed)) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Index drawn with probability proportional to weights.
  std::size_t categorical(const Eigen::VectorXd& weights);
  ng::Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  /// Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, bool) : key_(key) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace gcrl
