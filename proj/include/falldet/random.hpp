#pragma once

// Portable seeded randomness. std::*_distribution output is
// implementation-defined, so everything that must be reproducible across
// toolchains goes through these helpers on top of std::mt19937_64, whose
// output sequence is fixed by the standard.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <type_traits>
#include <vector>

namespace falldet {

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a(std::string_view text,
                           std::uint64_t hash = 14695981039346656037ull) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and labels.
template <class... Parts>
std::uint64_t derive_seed(std::uint64_t seed, const Parts&... parts) {
  std::uint64_t h = splitmix64(seed);
  auto mix = [&h](const auto& part) {
    if constexpr (std::is_convertible_v<decltype(part), std::string_view>) {
      h = splitmix64(fnv1a(std::string_view(part), h));
    } else {
      h = splitmix64(h ^ static_cast<std::uint64_t>(part));
    }
  };
  (mix(parts), ...);
  return h;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Standard normal via Box-Muller (one value per call, no caching).
inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace falldet
