#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tfpose {

/// splitmix64 step; used to derive independent stream seeds from (seed, index)
/// pairs so instance-level work is reproducible regardless of worker count.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void fill_uniform(std::vector<T>& v, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(std::vector<T>& v, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace tfpose
