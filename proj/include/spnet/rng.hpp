#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace spnet {

/// Deterministic random stream.  Every consumer derives its own stream from
/// (seed, label) so adding a new consumer never shifts the draws of another.
/// Uniform and normal variates are generated by hand on top of mt19937_64 to
/// stay bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
      : engine_(mix(seed, stream, index)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive.
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(engine_() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller (one variate per pair of uniforms kept
  /// simple and deterministic; the discarded second variate is intentional).
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    std::uint64_t h = 0x9e3779b97f4a7c15ull ^ seed;
    for (unsigned char ch : stream) {
      h ^= ch;
      h *= 0x100000001b3ull;
      h ^= h >> 29;
    }
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
  }

  std::mt19937_64 engine_;
};

}  // namespace spnet
