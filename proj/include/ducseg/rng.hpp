#pragma once

// Deterministic pseudo-random numbers.
//
// The generator is SplitMix64 (Steele, Lea & Flood 2014): state advances by
// the golden-ratio increment 0x9E3779B97F4A7C15 and each output is the
// state passed through the fixed mix
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
// Derived variates use only this stream:
//   uniform()      = (next() >> 11) * 2^-53            in [0, 1)
//   normal()       = Box-Muller, cos branch only, one normal per two draws
//   below(n)       = floor(uniform() * n)
//   shuffle        = Fisher-Yates from the back, j = below(i + 1)
// Standard-library distributions are avoided on purpose: their algorithms
// are implementation-defined, which would break cross-platform seeds.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace ducseg {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) *
                      std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  bool coin(double p = 0.5) noexcept { return uniform() < p; }

  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent stream for item `index` of a seeded collection.
  static SplitMix64 derive(std::uint64_t seed, std::uint64_t index) noexcept {
    SplitMix64 mixer(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    return SplitMix64(mixer.next());
  }

 private:
  std::uint64_t state_;
};

}  // namespace ducseg
