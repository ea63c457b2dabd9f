#pragma once

#include <cstdint>
#include <random>

namespace x2d3d {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent per-task seeds so that a
// task's randomness does not depend on how many draws earlier tasks made.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) {
  return mix64(mix64(seed ^ mix64(stream)) + counter);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0) {
  return Rng(derive_seed(seed, stream, counter));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double gaussian(Rng& rng, double sigma = 1.0) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace x2d3d
