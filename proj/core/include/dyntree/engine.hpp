// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dyntree/distribution.hpp"
#include "dyntree/draft_tree.hpp"
#include "dyntree/models.hpp"
#include "dyntree/random.hpp"
#include "dyntree/verification.hpp"

namespace dyntree {

enum class Mode {
  kEagle2,    ///< value-ranked expansion + global top-m rerank
  kNoValue,   ///< expansion ranked by confidence, rerank by value
  kNoRerank,  ///< value-ranked expansion, expansion picks used directly
  kNoBoth,    ///< static tree
  kChainSps,  ///< single chain, standard speculative sampling
  kVanilla,   ///< one target token per step, no draft
};

std::string to_string(Mode mode);
/// Accepts the names printed by to_string ("eagle2", "no_value", ...).
Mode parse_mode(const std::string& name);

struct EngineConfig {
  Mode mode = Mode::kEagle2;
  int depth = 6;
  int k = 10;
  int branch = 10;
  std::size_t m = 60;
  /// 0 selects greedy decoding and greedy verification.
  double temperature = 1.0;
  std::size_t max_tokens = 64;
  std::uint64_t seed = 0;
  /// Layer widths for kNoBoth; empty means default_static_shape(depth, m).
  std::vector<int> static_shape;
  /// Test-only acceptance perturbation, see VerifyOptions.
  double accept_bias = 0.0;
  /// Keep every cycle's FlatDraft in the trace (for --dump-tree).
  bool keep_drafts = false;

  /// Throws InvalidInput on out-of-range fields.
  void validate() const;
  std::vector<int> effective_static_shape() const;
};

struct GenerationTrace {
  Context prompt;
  std::vector<TokenId> emitted;
  std::vector<VerificationOutcome> cycles;
  EngineConfig config;
  /// Parallel to `cycles` when config.keep_drafts is set.
  std::vector<FlatDraft> drafts;
};

/// Target distribution at every flat position, each conditioned on `ctx`
/// plus only the tokens the ancestor mask lets that position see.
MaskedTargets compute_masked_target_dists(const LanguageModel& target, const Context& ctx,
                                          const FlatDraft& draft);

/// Draft for one cycle under cfg.mode. `draft_model` must already carry the
/// sampling temperature. Only kChainSps at temperature > 0 consumes `rng`.
FlatDraft build_cycle_draft(const LanguageModel& draft_model, const Context& ctx,
                            const EngineConfig& cfg, Rng& rng);

/// Draft-then-verify generation loop.
///
/// Holds non-owning references to both models. With the draft cache enabled,
/// deterministic drafts and their masked targets are memoized per context;
/// the cache makes generate() unsafe to call concurrently on one engine.
class SpeculativeEngine {
 public:
  SpeculativeEngine(const LanguageModel& target, const LanguageModel& draft, EngineConfig cfg);

  const EngineConfig& config() const noexcept { return cfg_; }

  GenerationTrace generate(const Context& prompt) const { return generate(prompt, cfg_.seed); }
  GenerationTrace generate(const Context& prompt, std::uint64_t seed) const;

  void enable_draft_cache(bool enabled);

 private:
  struct CycleInputs {
    FlatDraft draft;
    MaskedTargets targets;
  };

  std::shared_ptr<const CycleInputs> cycle_inputs(const Context& ctx, Rng& rng) const;

  const LanguageModel& target_;
  const LanguageModel& draft_;
  EngineConfig cfg_;
  std::optional<TemperedModel> tempered_target_;
  std::optional<TemperedModel> tempered_draft_;
  bool cache_enabled_ = false;
  mutable std::map<Context, std::shared_ptr<const CycleInputs>> cache_;
};

/// One-shot convenience wrapper around SpeculativeEngine.
GenerationTrace generate(const LanguageModel& target, const LanguageModel& draft,
                         const Context& prompt, const EngineConfig& cfg);

/// Reference greedy decoder: repeated target argmax.
std::vector<TokenId> greedy_decode(const LanguageModel& target, const Context& prompt,
                                   std::size_t n_tokens);

/// Prompt sampled autoregressively from `model` (raw distributions).
Context synthesize_prompt(const LanguageModel& model, std::size_t length, std::uint64_t seed);

}  // namespace dyntree
