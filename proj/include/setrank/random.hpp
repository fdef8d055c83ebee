#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <unordered_set>
#include <vector>

#include "setrank/error.hpp"

namespace setrank {

using Rng = std::mt19937_64;

// Stream domains. Every generator in the project is derived from the single
// user-facing seed plus one of these tags, so distinct subsystems never share
// a stream even when they share a seed.
namespace stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t model_init = 2;
inline constexpr std::uint64_t epoch_plan = 3;
inline constexpr std::uint64_t bpr_epoch = 4;
inline constexpr std::uint64_t world_items = 5;
inline constexpr std::uint64_t world_users = 6;
inline constexpr std::uint64_t world_draw = 7;
inline constexpr std::uint64_t mc = 8;
}  // namespace stream

inline Rng make_rng(std::uint64_t seed, std::uint64_t domain, std::uint64_t index = 0) {
  std::seed_seq seq{
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(domain), static_cast<std::uint32_t>(domain >> 32),
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// splitmix64 finalizer; used to derive per-replicate seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Uniform in (0, 1]; never returns 0 so -log(u) stays finite.
inline double uniform_pos(Rng& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return 1.0 - u;
}

// Uniform sample without replacement of size k from {0..n-1} \ excluded.
// `excluded` must be sorted. Rejection sampling while the target is sparse,
// complement enumeration with a partial Fisher-Yates otherwise.
inline std::vector<std::uint32_t> sample_complement(Rng& rng, std::uint32_t n,
                                                    const std::vector<std::uint32_t>& excluded,
                                                    std::size_t k) {
  const std::size_t available = n - excluded.size();
  if (k > available)
    throw error(errc::invalid_argument, "cannot sample " + std::to_string(k) + " of " +
                                            std::to_string(available) + " available items");
  std::vector<std::uint32_t> out;
  out.reserve(k);
  if (k == 0) return out;
  if (k * 2 <= available) {
    std::unordered_set<std::uint32_t> drawn;
    drawn.reserve(k * 2);
    while (out.size() < k) {
      auto cand = static_cast<std::uint32_t>(uniform_index(rng, n));
      if (std::binary_search(excluded.begin(), excluded.end(), cand)) continue;
      if (!drawn.insert(cand).second) continue;
      out.push_back(cand);
    }
  } else {
    std::vector<std::uint32_t> pool;
    pool.reserve(available);
    std::size_t e = 0;
    for (std::uint32_t v = 0; v < n; ++v) {
      if (e < excluded.size() && excluded[e] == v) {
        ++e;
        continue;
      }
      pool.push_back(v);
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

}  // namespace setrank
