#pragma once

#include <cmath>
#include <cstdint>

namespace obsflow {

/// Counter-based splittable RNG built on the splitmix64 finalizer.
/// A (seed, stream) pair fully determines the sequence, so sample j of a
/// dataset can be generated on any thread, in any order, bit-identically.
/// Not cryptographic; statistical quality is ample for sampling ICs.
class SplitRng {
public:
  SplitRng(std::uint64_t seed, std::uint64_t stream)
      : state_(mix(mix(seed + 0x9e3779b97f4a7c15ull) ^ mix(stream))) {}

  explicit SplitRng(std::uint64_t seed) : SplitRng(seed, 0) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // u1 = 0 would take log(0); the 53-bit grid excludes 1, shift excludes 0.
    u1 = 1.0 - u1;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(phi);
    have_cached_ = true;
    return r * std::cos(phi);
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace obsflow
