#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kits {

/// Seeded pseudo-random stream. Distributions are computed from raw 64-bit
/// draws so results do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal via Box-Muller.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministically derives an independent seed for a named stream
/// ("mask", "augmentation", "init", "batching", ...) from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

inline Rng stream(std::uint64_t root, std::string_view name) {
  return Rng(derive_seed(root, name));
}

}  // namespace kits
