// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dyntree {

using TokenId = std::uint32_t;

/// A token prefix T_{1:j}. The last element is the most recent token.
using Context = std::vector<TokenId>;

/// Entries of every TokenDistribution sum to 1 within this tolerance.
inline constexpr double kSumTolerance = 1e-9;

/// Probability vector over a finite vocabulary.
///
/// Construction validates non-negativity and normalization, so every live
/// instance is a proper distribution. The default-constructed value is empty
/// and only useful as a placeholder.
class TokenDistribution {
 public:
  TokenDistribution() = default;

  /// Takes ownership of `probs`; throws InvalidInput unless the entries are
  /// finite, non-negative, and sum to 1 within kSumTolerance.
  explicit TokenDistribution(std::vector<double> probs);

  /// Divides `weights` by their sum. Throws InvalidInput if the sum is not
  /// positive or an entry is negative.
  static TokenDistribution normalized(std::vector<double> weights);
  static TokenDistribution uniform(std::size_t vocab_size);
  static TokenDistribution point_mass(std::size_t vocab_size, TokenId token);

  std::size_t size() const noexcept { return probs_.size(); }
  bool empty() const noexcept { return probs_.empty(); }
  double operator[](TokenId token) const { return probs_[token]; }
  std::span<const double> probs() const noexcept { return probs_; }

  /// Highest-probability token; ties go to the lowest TokenId.
  TokenId argmax() const;

  /// Up to `n` tokens with positive probability, by descending probability
  /// then ascending TokenId.
  std::vector<TokenId> top_tokens(std::size_t n) const;

  friend bool operator==(const TokenDistribution&, const TokenDistribution&) = default;

 private:
  std::vector<double> probs_;
};

/// Sharpens (T < 1) or flattens (T > 1) a distribution: p_i^{1/T} renormalized.
/// T == 1 returns the input unchanged. Requires T > 0.
TokenDistribution apply_temperature(const TokenDistribution& dist, double temperature);

/// Largest absolute entrywise difference; sizes must match.
double max_abs_difference(const TokenDistribution& a, const TokenDistribution& b);

}  // namespace dyntree
