// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "dyntree/distribution.hpp"
#include "dyntree/draft_tree.hpp"
#include "dyntree/random.hpp"

namespace dyntree {

/// Target distributions for one verification pass, as produced by a single
/// tree-masked forward of the target: `root` follows the accepted context,
/// `at[i]` follows the path ending at flat position i (inclusive).
struct MaskedTargets {
  TokenDistribution root;
  std::vector<TokenDistribution> at;

  /// Distribution after position `pos`, or after the root for kNoParent.
  const TokenDistribution& after(std::int32_t pos) const {
    return pos == kNoParent ? root : at[static_cast<std::size_t>(pos)];
  }
};

enum class TrialStatus : std::uint8_t {
  kNotReached,  ///< never tested (an ancestor or earlier sibling decided first)
  kAccepted,
  kRejected,
};

/// Everything metrics need to know about one draft position in one cycle.
struct DraftTrial {
  int depth = 0;
  int layer_rank = 0;
  double confidence = 0.0;
  TrialStatus status = TrialStatus::kNotReached;
};

struct VerificationOutcome {
  std::vector<TokenId> accepted;
  std::vector<std::int32_t> accepted_positions;
  /// Correction token on rejection, fresh target sample after a full path.
  TokenId bonus = 0;
  /// One entry per flat draft position.
  std::vector<DraftTrial> trials;

  std::size_t cycle_length() const noexcept { return accepted.size() + 1; }
};

/// Test-only perturbations of the acceptance rule.
struct VerifyOptions {
  /// Added to every acceptance probability, then clamped to 1. Breaks
  /// losslessness on purpose; used to show the certifier catches it.
  double accept_bias = 0.0;
};

/// min(1, p(t) / q(t)). Throws InvalidInput if q(t) == 0.
double accept_probability(const TokenDistribution& p, const TokenDistribution& q, TokenId t);

/// norm(max(0, p - q)). Throws InvalidState if p <= q everywhere, which
/// only happens when acceptance was certain.
TokenDistribution residual(const TokenDistribution& p, const TokenDistribution& q);

/// Sequential chain verification. Sampled chains use the draft
/// distributions; deterministic chains use point-mass proposals.
VerificationOutcome verify_chain(const MaskedTargets& targets, const FlatDraft& draft, Rng& rng,
                                 const VerifyOptions& options = {});

/// Multi-branch verification. At each reached node the children are tried
/// in descending value; a rejected child turns the target into its residual
/// and the next sibling is tried. When no child is accepted the bonus comes
/// from the final residual; at a leaf it comes from the target there.
VerificationOutcome verify_tree(const MaskedTargets& targets, const FlatDraft& draft, Rng& rng,
                                const VerifyOptions& options = {});

/// Temperature-0 verification: a child is accepted iff it is the target
/// argmax at its parent (ties to lowest TokenId). Deterministic.
VerificationOutcome verify_greedy(const MaskedTargets& targets, const FlatDraft& draft);

}  // namespace dyntree
