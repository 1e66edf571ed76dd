// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "dyntree/distribution.hpp"

namespace dyntree {

/// SplitMix64 finalizer. Used to spread user seeds and to derive
/// independent per-stream seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

/// Seed for stream `index` under a base seed. Streams with different
/// indices are statistically independent.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

/// Explicitly seeded random source. There is no ambient RNG anywhere in the
/// library; every stochastic operation takes one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Inverse-CDF draw. Never returns a zero-probability token.
  TokenId sample(const TokenDistribution& dist) noexcept;

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dyntree
