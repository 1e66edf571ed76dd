// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "dyntree/distribution.hpp"
#include "dyntree/draft_tree.hpp"
#include "dyntree/engine.hpp"
#include "dyntree/models.hpp"
#include "dyntree/verification.hpp"

// Brute-force ground truth. Nothing here calls into the verification
// routines it is used to check; acceptance and residual arithmetic are
// re-derived locally.

namespace dyntree {

/// Bound on the number of enumerated sequences (V^L) in any exact law.
inline constexpr std::uint64_t kMaxEnumeratedSequences = 1'000'000;

struct ExactSequenceDistribution {
  std::size_t horizon = 0;
  std::map<Context, double> probs;

  double total() const;
  /// Law of the first horizon-1 tokens.
  ExactSequenceDistribution drop_last() const;
  double prob(const Context& seq) const;
};

/// Exact law of the next `horizon` tokens under vanilla sampling from
/// `target`. Throws GuardExceeded if V^horizon > kMaxEnumeratedSequences.
ExactSequenceDistribution exact_autoregressive(const LanguageModel& target, const Context& prompt,
                                               std::size_t horizon);

struct OracleLimits {
  std::size_t max_draft_size = 7;
  std::size_t max_vocab = 4;
};

/// Exact outcome law of one tree verification over a fixed draft.
struct VerificationLaw {
  /// Probability of each emitted sequence (accepted path + bonus token).
  std::map<Context, double> sequences;
  /// Index 0: law of the token emitted right after the root; index i + 1:
  /// law of the token emitted right after accepting position i. nullopt
  /// for positions that are reached with probability zero.
  std::vector<std::optional<TokenDistribution>> next_token;
  /// Same indexing: probability that the node is reached.
  std::vector<double> reach;
};

/// Enumerates every accept/reject branch of tree verification with its
/// exact probability. Throws GuardExceeded beyond `limits`.
VerificationLaw exact_tree_verification_marginal(const MaskedTargets& targets,
                                                 const FlatDraft& draft,
                                                 const OracleLimits& limits = {});

/// Emitted-token law at a node whose `n_candidates` children are drawn from
/// q without replacement (in draw order) and verified by residual rejection.
TokenDistribution exact_sampled_candidates_marginal(const TokenDistribution& p,
                                                    const TokenDistribution& q,
                                                    std::size_t n_candidates);

/// Exact law of the tokens emitted by one engine cycle from `ctx`. Models
/// must already carry the temperature; cfg.temperature only selects greedy
/// vs sampled verification and sampled chain drafting.
std::map<Context, double> exact_cycle_law(const LanguageModel& target,
                                          const LanguageModel& draft_model, const Context& ctx,
                                          const EngineConfig& cfg);

/// Exact law of the first `horizon` tokens emitted by the engine (all
/// cycles), applying cfg.temperature the same way the engine does.
ExactSequenceDistribution exact_generation_law(const LanguageModel& target,
                                               const LanguageModel& draft_model,
                                               const Context& prompt, std::size_t horizon,
                                               const EngineConfig& cfg);

/// Largest absolute probability difference over the union of supports.
double max_abs_difference(const ExactSequenceDistribution& a, const ExactSequenceDistribution& b);

struct EquivalenceVerdict {
  double statistic = 0.0;
  double p_value = 1.0;
  double tv_distance = 0.0;
  std::uint64_t n_samples = 0;
  std::size_t cells = 0;
  std::size_t degrees_of_freedom = 0;
  double alpha = 0.0;
  bool pass = false;
};

/// Pearson chi-square of observed sequence counts against an exact law.
/// Sequences with expected count < 5 are pooled into one cell (folded into
/// the smallest cell if the pool itself is under 5). Throws
/// InsufficientSamples when no cell can reach an expected count of 5.
EquivalenceVerdict chi_square_equivalence(const std::map<Context, std::uint64_t>& observed,
                                          const ExactSequenceDistribution& expected, double alpha);

/// Calls `fn` once for every draft tree with at most `max_nodes` nodes whose
/// sibling tokens are distinct tokens of a `vocab`-sized vocabulary,
/// including every sibling order. Trees are flattened breadth-first; sibling
/// values strictly decrease in flat order. Returns the number of trees.
std::uint64_t for_each_draft_shape(std::size_t max_nodes, std::size_t vocab,
                                   const std::function<void(const FlatDraft&)>& fn);

}  // namespace dyntree
