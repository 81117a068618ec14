#pragma once

#include <cstdint>
#include <limits>

namespace dsguard {

/// SplitMix64 (Steele, Lea & Flood). Used wherever output must be identical
/// across platforms; std distributions are avoided for the same reason.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Unbiased uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (true) {
      const std::uint64_t r = (*this)();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed for record `index` under `seed`.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t domain = 0) {
  SplitMix64 mix(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)) ^ (0x8CB92BA72F3D8DD7ULL * (domain + 1)));
  mix();
  return mix();
}

}  // namespace dsguard
