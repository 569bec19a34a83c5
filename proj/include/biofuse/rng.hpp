#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace biofuse {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Child seed for a named stage: splitmix64(parent ^ fnv1a(label)).
// Every random stream in the pipeline is derived from the root seed this way,
// so each stage can be rerun in isolation.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return detail::splitmix64(parent ^ detail::fnv1a(label));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return detail::splitmix64(detail::splitmix64(parent) ^ index);
}

}  // namespace biofuse
