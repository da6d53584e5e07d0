#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mialab {

// All randomness is keyed: a stream is created from (base seed, tag) or
// (base seed, index) so results never depend on the order in which work runs.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a_bytes(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) { return splitmix64(splitmix64(base) ^ index); }

inline uint64_t derive_seed(uint64_t base, std::string_view tag) { return derive_seed(base, fnv1a(tag)); }

using Rng = std::mt19937_64;

}  // namespace mialab
