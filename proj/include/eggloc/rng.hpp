#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace eggloc {

// splitmix64 step; used to derive per-epoch seeds from one root seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Fisher-Yates with an explicit draw so the permutation is identical on every
// platform (std::shuffle leaves the generator usage unspecified).
template <typename T>
void deterministic_shuffle(std::vector<T>& values, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace eggloc
