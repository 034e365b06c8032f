#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rmf {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a key tuple into one 64-bit value; order-sensitive.
constexpr std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Uniform double in [0, 1) from the 53 high bits.
constexpr double unit_double(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Stateless draw keyed by an arbitrary tuple (counter-based RNG).
constexpr double counter_uniform(std::initializer_list<std::uint64_t> key) noexcept {
  return unit_double(hash_key(key));
}

/// Seed for a named sub-stream of a run seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return hash_key({seed, stream});
}

using Engine = std::mt19937_64;

}  // namespace rmf
