#pragma once

#include <cstdint>

namespace mpln {

// splitmix64 finalizer; used to derive independent sub-stream seeds from one
// user seed so that every random draw in a pipeline is replayable.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `index` of `seed` (grid cell, restart, replicate, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix_seed(seed ^ index);
}

/// Two-level derivation, e.g. (cell, restart).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return mix_seed(derive_seed(seed, a) ^ mix_seed(b + 0x632BE59BD9B4E019ULL));
}

}  // namespace mpln
