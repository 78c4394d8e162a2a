#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace crowdcal {

using Rng = std::mt19937_64;

// splitmix64 finalizer; a bijective scramble of 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Child seeds for independent work units (annotators, replicates, jobs).
// A unit's stream depends only on (master, key), never on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key) noexcept {
  return mix64(mix64(master) ^ mix64(key + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view key) noexcept {
  return derive_seed(master, fnv1a64(key));
}

}  // namespace crowdcal
