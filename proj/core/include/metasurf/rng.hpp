#pragma once

#include <cstdint>
#include <random>

namespace metasurf {

/// Mixes a master seed and a stream index into an independent 64-bit seed
/// (splitmix64 finalizer applied twice). Used for per-sample seed derivation.
std::uint64_t hash64(std::uint64_t master, std::uint64_t index) noexcept;

/// Seeded generator with platform-independent distributions. The standard
/// engine is portable by definition; the <random> distributions are not, so
/// all draws go through the helpers below.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace metasurf
