#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mortfc {

/// SplitMix64 step; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic stream id from a master seed and a sequence of indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = master;
  (void)splitmix64(s);
  s ^= 0x9e3779b97f4a7c15ULL * (a + 1);
  (void)splitmix64(s);
  s ^= 0xc2b2ae3d27d4eb4fULL * (b + 1);
  (void)splitmix64(s);
  s ^= 0x165667b19e3779f9ULL * (c + 1);
  return splitmix64(s);
}

/// Seeded random stream with portable output. The uniform and normal draws
/// are built from the standard-specified mt19937_64 bit stream, so sequences
/// are reproducible across platforms and standard libraries. Independent
/// streams keyed by (seed, stream) make parallel use order-independent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : gen_(derive_seed(seed, stream)) {}

  /// Uniform draw strictly inside (0, 1).
  double uniform() {
    const std::uint64_t bits = gen_();
    return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal via Box-Muller (no reliance on library distributions).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return gen_() % n; }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mortfc
