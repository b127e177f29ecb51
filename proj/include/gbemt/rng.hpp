#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace gbemt {

/// SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter-based generator.
///
/// Reference sequence for seed 1234567, first five outputs:
///   6457827717110365317, 3203168211198807973, 9817491932198370423,
///   4593380528125082431, 16408922859458223821
/// Every random decision in the toolkit flows through this generator so
/// other implementations can reproduce subsampling, splits and shuffles.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection of the biased low range. n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

/// Child seed for a named role: first SplitMix64 output seeded with seed ^ fnv1a64(role).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view role);

/// Fisher-Yates shuffle of [0, n), walking i from n-1 down to 1 and swapping with below(i+1).
std::vector<std::size_t> shuffled_indices(std::size_t n, SplitMix64& rng);

/// k distinct indices of [0, n) chosen uniformly (first k of a Fisher-Yates pass), sorted ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, SplitMix64& rng);

}  // namespace gbemt
