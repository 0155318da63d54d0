#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>

namespace skipgru {

/// Seedable generator that can be split into independent streams. Every
/// stochastic operation in the library takes one of these (or a seed it
/// turns into one), never global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed, stream)), engine_(key_) {}

  /// Independent child generator derived from this generator's key; the
  /// parent is not advanced.
  Rng split(std::uint64_t stream) const { return Rng(key_, stream); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    std::shuffle(items.begin(), items.end(), engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  // splitmix64 finaliser over (seed, stream)
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace skipgru
