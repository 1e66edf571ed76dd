// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/engine.hpp"

#include <cmath>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

constexpr std::size_t kMaxCachedContexts = std::size_t{1} << 16;

bool is_deterministic_draft(const EngineConfig& cfg) {
  return !(cfg.mode == Mode::kChainSps && cfg.temperature > 0.0);
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kEagle2: return "eagle2";
    case Mode::kNoValue: return "no_value";
    case Mode::kNoRerank: return "no_rerank";
    case Mode::kNoBoth: return "no_both";
    case Mode::kChainSps: return "chain_sps";
    case Mode::kVanilla: return "vanilla";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::kEagle2, Mode::kNoValue, Mode::kNoRerank, Mode::kNoBoth, Mode::kChainSps,
                 Mode::kVanilla}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidInput("unknown mode \"" + name + "\"");
}

void EngineConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("temperature must be finite and non-negative");
  }
  if (!(accept_bias >= 0.0 && accept_bias <= 1.0)) throw InvalidInput("accept_bias must be in [0, 1]");
  if (mode == Mode::kVanilla) return;
  if (depth < 1) throw InvalidInput("depth must be >= 1");
  if (k < 1) throw InvalidInput("k must be >= 1");
  if (branch < 1) throw InvalidInput("branch must be >= 1");
  if (m < 1) throw InvalidInput("m must be >= 1");
  for (int w : static_shape) {
    if (w < 1) throw InvalidInput("static shape widths must be positive");
  }
}

std::vector<int> EngineConfig::effective_static_shape() const {
  return static_shape.empty() ? default_static_shape(depth, m) : static_shape;
}

MaskedTargets compute_masked_target_dists(const LanguageModel& target, const Context& ctx,
                                          const FlatDraft& draft) {
  MaskedTargets out;
  out.root = target.next_distribution(ctx);
  out.at.reserve(draft.size());
  Context visible;
  for (std::size_t i = 0; i < draft.size(); ++i) {
    visible.assign(ctx.begin(), ctx.end());
    for (std::size_t j = 0; j <= i; ++j) {
      if (draft.mask(i, j)) visible.push_back(draft.tokens[j]);
    }
    out.at.push_back(target.next_distribution(visible));
  }
  return out;
}

FlatDraft build_cycle_draft(const LanguageModel& draft_model, const Context& ctx,
                            const EngineConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case Mode::kEagle2:
      return rerank_and_flatten(build_tree(ctx, draft_model, cfg.depth, cfg.k, cfg.branch), cfg.m);
    case Mode::kNoValue:
      return rerank_and_flatten(
          build_tree(ctx, draft_model, cfg.depth, cfg.k, cfg.branch, ExpansionKey::kConfidence), cfg.m);
    case Mode::kNoRerank:
      return flatten_expansion(build_tree(ctx, draft_model, cfg.depth, cfg.k, cfg.branch), cfg.k, cfg.m);
    case Mode::kNoBoth: {
      const auto shape = cfg.effective_static_shape();
      return static_tree(ctx, draft_model, shape, cfg.branch);
    }
    case Mode::kChainSps:
      if (cfg.temperature > 0.0) return sampled_chain(ctx, draft_model, cfg.depth, rng);
      return rerank_and_flatten(build_tree(ctx, draft_model, cfg.depth, 1, 1),
                                static_cast<std::size_t>(cfg.depth));
    case Mode::kVanilla:
      break;
  }
  throw InvalidInput("vanilla mode has no draft");
}

// ---------------------------------------------------------------------------
// SpeculativeEngine

SpeculativeEngine::SpeculativeEngine(const LanguageModel& target, const LanguageModel& draft,
                                     EngineConfig cfg)
    : target_(target), draft_(draft), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (target_.vocab_size() != draft_.vocab_size()) {
    throw InvalidInput("target and draft models have different vocabularies (" +
                       std::to_string(target_.vocab_size()) + " vs " +
                       std::to_string(draft_.vocab_size()) + ")");
  }
  if (cfg_.temperature > 0.0 && cfg_.temperature != 1.0) {
    tempered_target_.emplace(target_, cfg_.temperature);
    tempered_draft_.emplace(draft_, cfg_.temperature);
  }
}

void SpeculativeEngine::enable_draft_cache(bool enabled) {
  cache_enabled_ = enabled;
  if (!enabled) cache_.clear();
}

std::shared_ptr<const SpeculativeEngine::CycleInputs> SpeculativeEngine::cycle_inputs(
    const Context& ctx, Rng& rng) const {
  const LanguageModel& target = tempered_target_ ? *tempered_target_ : target_;
  const LanguageModel& draft = tempered_draft_ ? *tempered_draft_ : draft_;
  const bool cacheable = cache_enabled_ && is_deterministic_draft(cfg_);
  if (cacheable) {
    if (auto it = cache_.find(ctx); it != cache_.end()) return it->second;
  }
  auto inputs = std::make_shared<CycleInputs>();
  inputs->draft = build_cycle_draft(draft, ctx, cfg_, rng);
  inputs->targets = compute_masked_target_dists(target, ctx, inputs->draft);
  if (cacheable) {
    if (cache_.size() >= kMaxCachedContexts) cache_.clear();
    cache_.emplace(ctx, inputs);
  }
  return inputs;
}

GenerationTrace SpeculativeEngine::generate(const Context& prompt, std::uint64_t seed) const {
  check_in_vocabulary(prompt, target_.vocab_size());

  GenerationTrace trace;
  trace.prompt = prompt;
  trace.config = cfg_;
  trace.config.seed = seed;

  Rng rng(seed);
  Context ctx = prompt;
  const VerifyOptions options{cfg_.accept_bias};
  const bool greedy = cfg_.temperature == 0.0;

  while (trace.emitted.size() < cfg_.max_tokens) {
    VerificationOutcome outcome;
    if (cfg_.mode == Mode::kVanilla) {
      if (greedy) {
        outcome.bonus = target_.next_distribution(ctx).argmax();
      } else {
        const LanguageModel& target = tempered_target_ ? *tempered_target_ : target_;
        outcome.bonus = rng.sample(target.next_distribution(ctx));
      }
    } else {
      const auto inputs = cycle_inputs(ctx, rng);
      if (greedy) {
        outcome = verify_greedy(inputs->targets, inputs->draft);
      } else if (inputs->draft.proposal == Proposal::kSampled) {
        outcome = verify_chain(inputs->targets, inputs->draft, rng, options);
      } else {
        outcome = verify_tree(inputs->targets, inputs->draft, rng, options);
      }
      if (cfg_.keep_drafts) trace.drafts.push_back(inputs->draft);
    }

    for (TokenId t : outcome.accepted) {
      if (trace.emitted.size() == cfg_.max_tokens) break;
      trace.emitted.push_back(t);
      ctx.push_back(t);
    }
    if (trace.emitted.size() < cfg_.max_tokens) {
      trace.emitted.push_back(outcome.bonus);
      ctx.push_back(outcome.bonus);
    }
    trace.cycles.push_back(std::move(outcome));
  }
  return trace;
}

GenerationTrace generate(const LanguageModel& target, const LanguageModel& draft,
                         const Context& prompt, const EngineConfig& cfg) {
  return SpeculativeEngine(target, draft, cfg).generate(prompt);
}

std::vector<TokenId> greedy_decode(const LanguageModel& target, const Context& prompt,
                                   std::size_t n_tokens) {
  Context ctx = prompt;
  std::vector<TokenId> out;
  out.reserve(n_tokens);
  while (out.size() < n_tokens) {
    const TokenId t = target.next_distribution(ctx).argmax();
    out.push_back(t);
    ctx.push_back(t);
  }
  return out;
}

Context synthesize_prompt(const LanguageModel& model, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  Context ctx;
  ctx.reserve(length);
  while (ctx.size() < length) ctx.push_back(rng.sample(model.next_distribution(ctx)));
  return ctx;
}

}  // namespace dyntree
