// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_RNG_HPP
#define FACESYNTH_RNG_HPP

#include <cmath>
#include <cstdint>

namespace facesynth {

// Counter-based generator built on the splitmix64 finalizer. Any value in the
// (seed, stream, counter) space can be produced independently, which is what
// keeps sampling deterministic regardless of how work is split across threads.
namespace rng {

inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t counter) {
  return mix(mix(seed ^ 0x8d5cdb8be1f7a3adull) + mix(stream) + counter);
}

}  // namespace rng

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return rng::hash(seed_, stream_, counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n) {
    // Lemire's multiply-shift; the tiny modulo bias is irrelevant here and
    // the mapping is a pure function of the counter.
    unsigned __int128 m =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller; the sine partner is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace facesynth

#endif  // FACESYNTH_RNG_HPP
