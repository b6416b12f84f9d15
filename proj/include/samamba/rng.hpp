#pragma once

#include <cstdint>
#include <random>

namespace samamba {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent streams from (seed, keys...).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(mix_seed(seed, a, b));
}

template <typename T>
T uniform(Rng& rng, T lo, T hi) {
  return std::uniform_real_distribution<double>(static_cast<double>(lo), static_cast<double>(hi))(rng);
}

template <typename T>
T normal(Rng& rng, T mean = T(0), T stddev = T(1)) {
  return static_cast<T>(std::normal_distribution<double>(mean, stddev)(rng));
}

}  // namespace samamba
