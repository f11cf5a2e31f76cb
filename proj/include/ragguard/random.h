#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "ragguard/common.h"

namespace ragguard {

// mt19937_64 output is specified by the standard; the distribution helpers
// below are written out so draws do not depend on the standard library.
using Rng = std::mt19937_64;

// Independent stream for (seed, stream, index), e.g. one per training example.
inline std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t index = 0) {
  return Mix64(Mix64(seed ^ Mix64(stream)) ^ index);
}

// Uniform in [0, 1) with 53 random bits.
inline double UniformUnit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double UniformRange(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * UniformUnit(rng);
}

// Uniform in [0, n) by rejection; n must be > 0.
inline std::uint64_t UniformIndex(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

inline bool Bernoulli(Rng& rng, double p) { return UniformUnit(rng) < p; }

template <typename T>
void Shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(UniformIndex(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> SampleIndices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(UniformIndex(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace ragguard
