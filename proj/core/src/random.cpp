// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/random.hpp"

namespace dyntree {

std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(base) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

TokenId Rng::sample(const TokenDistribution& dist) noexcept {
  const auto probs = dist.probs();
  const double u = uniform();
  double acc = 0.0;
  TokenId last_positive = 0;
  for (TokenId t = 0; t < probs.size(); ++t) {
    if (probs[t] <= 0.0) continue;
    last_positive = t;
    acc += probs[t];
    if (u < acc) return t;
  }
  // Rounding left the cumulative sum just below u.
  return last_positive;
}

}  // namespace dyntree
