#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cfr {

using Rng = std::mt19937_64;

namespace seeding {

/// splitmix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for (parent, label, index). Streams for distinct labels or indices
/// are independent of each other, so adding a stage never shifts another's stream.
constexpr std::uint64_t derive(std::uint64_t parent, std::string_view label,
                               std::uint64_t index = 0) noexcept {
  return mix(mix(parent ^ fnv1a(label)) + mix(index + 0x632be59bd9b4e019ULL));
}

}  // namespace seeding

inline Rng make_rng(std::uint64_t seed) { return Rng(seeding::mix(seed)); }

inline Rng make_rng(std::uint64_t parent, std::string_view label, std::uint64_t index = 0) {
  return Rng(seeding::derive(parent, label, index));
}

}  // namespace cfr
