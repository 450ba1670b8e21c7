#pragma once

#include <cstdint>
#include <random>

namespace nmaci {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Independent generator for work item `index` under `seed`. Streams depend
/// only on (seed, index), never on scheduling.
inline Rng stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  std::uint64_t s = detail::splitmix64(seed ^ detail::splitmix64(salt + 0x5851f42d4c957f2dULL));
  s = detail::splitmix64(s ^ detail::splitmix64(index));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace nmaci
