#pragma once

#include <cstdint>
#include <random>

namespace rfedit {

/// Seeded generator whose streams are identical on every platform:
/// std::mt19937_64 is fully specified by the standard, and the uniform and
/// normal transforms below avoid the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives a child seed from a parent seed and a stream tag (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace rfedit
