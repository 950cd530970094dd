#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace msp {

// Counter-style generator (splitmix64 finalizer). Self-contained so every
// stream is reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; draws two uniforms per call so the
  // stream position is input-independent.
  double gauss() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double gauss(double mean, double sigma) { return mean + sigma * gauss(); }

 private:
  uint64_t state_;
};

namespace seed_tag {
// Stream tags for deriving independent child seeds from one master seed.
inline constexpr uint64_t kAnatomy = 1;
inline constexpr uint64_t kPlatform = 2;
inline constexpr uint64_t kInit = 3;
inline constexpr uint64_t kShuffle = 4;
inline constexpr uint64_t kSplit = 5;
inline constexpr uint64_t kNoise = 6;
inline constexpr uint64_t kGain = 7;
inline constexpr uint64_t kMixing = 8;
inline constexpr uint64_t kConnection = 9;
}  // namespace seed_tag

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic seed splitting: children of one parent never collide across
// distinct (tag, a, b) triples in practice and are reproducible by value.
inline uint64_t derive_seed(uint64_t parent, uint64_t tag, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = parent;
  h = detail::mix64(h ^ (0x9e3779b97f4a7c15ULL + tag * 0xbf58476d1ce4e5b9ULL));
  h = detail::mix64(h ^ (0x94d049bb133111ebULL + a * 0x2545f4914f6cdd1dULL));
  h = detail::mix64(h ^ (0xd6e8feb86659fd93ULL + b * 0x9e3779b97f4a7c15ULL));
  return h;
}

// Fisher-Yates permutation of 0..n-1, reproducible by seed.
inline std::vector<int64_t> random_permutation(int64_t n, uint64_t seed) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    const uint64_t j = rng.below(static_cast<uint64_t>(i) + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

}  // namespace msp
