#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace uma2 {

// FNV-1a. Stable across platforms; used only to derive seed material.
inline std::uint64_t hash64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer. Used for seed-independent hash splits (e.g. the
// held-out user partition, which must not move when the run seed changes).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent deterministic stream per (master seed, purpose, index).
// Epoch-level streams are derived this way so a resumed run replays the
// exact shuffles and draws of the uninterrupted one.
inline std::mt19937_64 make_rng(std::uint64_t master_seed, std::string_view stream,
                                std::uint64_t index = 0) {
  const std::uint64_t tag = hash64(stream);
  std::seed_seq seq{
      static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
      static_cast<std::uint32_t>(tag),         static_cast<std::uint32_t>(tag >> 32),
      static_cast<std::uint32_t>(index),       static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace uma2
