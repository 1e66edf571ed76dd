// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/verification.hpp"

#include <algorithm>
#include <string>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

void check_targets(const MaskedTargets& targets, const FlatDraft& draft) {
  if (targets.at.size() != draft.size()) {
    throw InvalidInput("expected " + std::to_string(draft.size()) + " target distributions, got " +
                       std::to_string(targets.at.size()));
  }
  check_flat_draft(draft);
}

VerificationOutcome start_outcome(const FlatDraft& draft) {
  VerificationOutcome out;
  out.trials.resize(draft.size());
  for (std::size_t i = 0; i < draft.size(); ++i) {
    out.trials[i].depth = draft.depths[i];
    out.trials[i].layer_rank = draft.layer_ranks[i];
    out.trials[i].confidence = draft.confidences[i];
  }
  return out;
}

void accept(VerificationOutcome& out, const FlatDraft& draft, std::int32_t pos) {
  out.trials[static_cast<std::size_t>(pos)].status = TrialStatus::kAccepted;
  out.accepted.push_back(draft.tokens[static_cast<std::size_t>(pos)]);
  out.accepted_positions.push_back(pos);
}

std::vector<double> copy_probs(const TokenDistribution& d) {
  return {d.probs().begin(), d.probs().end()};
}

// Weights that are all zero (or noise-level after cancellation) mean the
// rejected branch had probability zero; keep the previous target then.
TokenDistribution renormalize_or(std::vector<double> weights, const TokenDistribution& previous) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (!(sum > 1e-300)) return previous;
  for (double& w : weights) w /= sum;
  return TokenDistribution::normalized(std::move(weights));
}

// Multi-round rejection over one sibling group. Returns the accepted
// position, or kNoParent with `target` left as the final residual.
std::int32_t try_children(const std::vector<std::int32_t>& children, const FlatDraft& draft,
                          TokenDistribution& target, Rng& rng, const VerifyOptions& options,
                          VerificationOutcome& out) {
  const bool sampled = draft.proposal == Proposal::kSampled;
  // Sampled siblings share their parent's draft distribution; rejected
  // tokens are removed from it as the rounds proceed.
  std::vector<double> proposal;
  if (sampled && !children.empty()) {
    proposal = copy_probs(draft.draft_dists[static_cast<std::size_t>(children.front())]);
  }

  for (std::int32_t c : children) {
    const TokenId token = draft.tokens[static_cast<std::size_t>(c)];
    double q_token = sampled ? proposal[token] : 1.0;
    if (q_token <= 0.0) {
      // Already rejected as an earlier sibling.
      out.trials[static_cast<std::size_t>(c)].status = TrialStatus::kRejected;
      continue;
    }
    const double a = std::min(1.0, std::min(1.0, target[token] / q_token) + options.accept_bias);
    if (rng.uniform() < a) return c;
    out.trials[static_cast<std::size_t>(c)].status = TrialStatus::kRejected;

    std::vector<double> next = copy_probs(target);
    if (sampled) {
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = std::max(0.0, next[i] - proposal[i]);
      proposal[token] = 0.0;
      double mass = 0.0;
      for (double q : proposal) mass += q;
      if (mass > 0.0) {
        for (double& q : proposal) q /= mass;
      }
    } else {
      next[token] = 0.0;
    }
    target = renormalize_or(std::move(next), target);
  }
  return kNoParent;
}

}  // namespace

double accept_probability(const TokenDistribution& p, const TokenDistribution& q, TokenId t) {
  if (t >= p.size() || t >= q.size()) throw InvalidInput("token outside vocabulary");
  if (q[t] <= 0.0) {
    throw InvalidInput("token " + std::to_string(t) + " has zero draft probability");
  }
  return std::min(1.0, p[t] / q[t]);
}

TokenDistribution residual(const TokenDistribution& p, const TokenDistribution& q) {
  if (p.size() != q.size()) throw InvalidInput("residual of distributions over different vocabularies");
  std::vector<double> diff(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = std::max(0.0, p.probs()[i] - q.probs()[i]);
    sum += diff[i];
  }
  if (!(sum > 0.0)) throw InvalidState("residual is zero: target equals draft, acceptance was certain");
  return TokenDistribution::normalized(std::move(diff));
}

VerificationOutcome verify_chain(const MaskedTargets& targets, const FlatDraft& draft, Rng& rng,
                                 const VerifyOptions& options) {
  check_targets(targets, draft);
  for (std::size_t i = 0; i < draft.size(); ++i) {
    const std::int32_t expected = i == 0 ? kNoParent : static_cast<std::int32_t>(i) - 1;
    if (draft.parents[i] != expected) throw InvalidInput("verify_chain needs a chain-shaped draft");
  }

  VerificationOutcome out = start_outcome(draft);
  const bool sampled = draft.proposal == Proposal::kSampled;
  for (std::size_t i = 0; i < draft.size(); ++i) {
    const TokenDistribution& p = targets.after(static_cast<std::int32_t>(i) - 1);
    const TokenId token = draft.tokens[i];
    const TokenDistribution q =
        sampled ? draft.draft_dists[i] : TokenDistribution::point_mass(p.size(), token);
    const double a = std::min(1.0, accept_probability(p, q, token) + options.accept_bias);
    if (rng.uniform() < a) {
      accept(out, draft, static_cast<std::int32_t>(i));
      continue;
    }
    out.trials[i].status = TrialStatus::kRejected;
    std::vector<double> diff(p.size());
    for (std::size_t v = 0; v < diff.size(); ++v) diff[v] = std::max(0.0, p.probs()[v] - q.probs()[v]);
    out.bonus = rng.sample(renormalize_or(std::move(diff), p));
    return out;
  }
  out.bonus = rng.sample(targets.after(static_cast<std::int32_t>(draft.size()) - 1));
  return out;
}

VerificationOutcome verify_tree(const MaskedTargets& targets, const FlatDraft& draft, Rng& rng,
                                const VerifyOptions& options) {
  check_targets(targets, draft);
  VerificationOutcome out = start_outcome(draft);
  const auto children = draft.children_by_value();

  std::int32_t node = kNoParent;
  TokenDistribution target = targets.root;
  while (true) {
    const auto& kids = children[static_cast<std::size_t>(node + 1)];
    if (kids.empty()) break;
    const std::int32_t next = try_children(kids, draft, target, rng, options, out);
    if (next == kNoParent) break;
    accept(out, draft, next);
    node = next;
    target = targets.after(node);
  }
  out.bonus = rng.sample(target);
  return out;
}

VerificationOutcome verify_greedy(const MaskedTargets& targets, const FlatDraft& draft) {
  check_targets(targets, draft);
  VerificationOutcome out = start_outcome(draft);
  const auto children = draft.children_by_value();

  std::int32_t node = kNoParent;
  while (true) {
    const TokenId best = targets.after(node).argmax();
    std::int32_t next = kNoParent;
    for (std::int32_t c : children[static_cast<std::size_t>(node + 1)]) {
      if (draft.tokens[static_cast<std::size_t>(c)] == best) {
        next = c;
        break;
      }
      out.trials[static_cast<std::size_t>(c)].status = TrialStatus::kRejected;
    }
    if (next == kNoParent) {
      out.bonus = best;
      return out;
    }
    accept(out, draft, next);
    node = next;
  }
}

}  // namespace dyntree
