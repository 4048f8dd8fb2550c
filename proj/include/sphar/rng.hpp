#pragma once

// Reproducible random substreams.
//
// Every independent series is driven by its own std::mt19937_64 whose seed is
// a SplitMix64 chain over (master seed, tag, replication, ell, m). Nothing
// depends on thread count or scheduling order. Gaussian draws use the
// Marsaglia polar method on 53-bit uniforms so output is identical across
// standard libraries (std::normal_distribution is implementation-defined).

#include <cmath>
#include <cstdint>
#include <random>

namespace sphar {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Identifies one series: which experiment stage (tag), which Monte Carlo
/// replication, which multipole and which m.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t tag = 0;
  std::uint64_t replication = 0;
  std::int64_t ell = 0;
  std::int64_t m = 0;
};

inline constexpr std::uint64_t derive_seed(const StreamKey& key) noexcept {
  std::uint64_t h = splitmix64(key.seed);
  h = splitmix64(h ^ key.tag);
  h = splitmix64(h ^ key.replication);
  h = splitmix64(h ^ static_cast<std::uint64_t>(key.ell));
  h = splitmix64(h ^ static_cast<std::uint64_t>(key.m));
  return h;
}

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  explicit NormalStream(const StreamKey& key) : engine_(derive_seed(key)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double operator()() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sphar
