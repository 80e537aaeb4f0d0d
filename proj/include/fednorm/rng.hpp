#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "fednorm/common.hpp"

namespace fednorm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a base seed with a list of stream labels into an independent substream
// seed. Every randomized component draws from its own substream so that results
// do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

// Well-known stream labels used across the library.
namespace stream {
inline constexpr std::uint64_t kInit = 0x01;
inline constexpr std::uint64_t kShuffle = 0x02;
inline constexpr std::uint64_t kRegularize = 0x03;
inline constexpr std::uint64_t kLabelSkew = 0x11;
inline constexpr std::uint64_t kQuantitySkew = 0x12;
inline constexpr std::uint64_t kFeatureSkew = 0x13;
inline constexpr std::uint64_t kMixedSkew = 0x14;
inline constexpr std::uint64_t kNoiseMask = 0x15;
inline constexpr std::uint64_t kNoiseApply = 0x16;
inline constexpr std::uint64_t kPublicSplit = 0x17;
inline constexpr std::uint64_t kDataset = 0x21;
inline constexpr std::uint64_t kPlan = 0x22;
inline constexpr std::uint64_t kFederation = 0x23;
inline constexpr std::uint64_t kW0 = 0x31;
inline constexpr std::uint64_t kRep = 0x32;
inline constexpr std::uint64_t kProblem = 0x33;
}  // namespace stream

// Deterministic PRNG. The engine is std::mt19937_64 (bit-exact by the standard)
// and all samplers are implemented here so streams do not depend on the standard
// library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (cosine branch, two uniforms per draw).
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(alpha, 1) via the Marsaglia-Tsang squeeze; alpha < 1 uses the
  // Gamma(alpha+1) boost with a uniform power correction.
  double gamma(double alpha) {
    if (!(alpha > 0.0)) throw ConfigError("gamma: alpha must be positive");
    if (alpha < 1.0) {
      double u = uniform01();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  // Fisher-Yates using the unbiased bounded sampler.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace fednorm
