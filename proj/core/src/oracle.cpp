// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

std::uint64_t checked_power(std::size_t base, std::size_t exp, std::uint64_t cap) {
  std::uint64_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (base != 0 && out > cap / base) return cap + 1;
    out *= base;
  }
  return out;
}

void guard_sequences(std::size_t vocab, std::size_t horizon, const char* what) {
  if (checked_power(vocab, horizon, kMaxEnumeratedSequences) > kMaxEnumeratedSequences) {
    throw GuardExceeded(std::string(what) + ": " + std::to_string(vocab) + "^" +
                        std::to_string(horizon) + " sequences exceeds the enumeration limit of " +
                        std::to_string(kMaxEnumeratedSequences));
  }
}

// Same-index sibling lists as FlatDraft::children_by_value, rebuilt here from
// parents and values so the oracle does not share that code path.
std::vector<std::vector<std::int32_t>> sibling_order(const FlatDraft& draft) {
  std::vector<std::vector<std::int32_t>> kids(draft.size() + 1);
  for (std::size_t i = 0; i < draft.size(); ++i) {
    kids[static_cast<std::size_t>(draft.parents[i] + 1)].push_back(static_cast<std::int32_t>(i));
  }
  for (auto& list : kids) {
    std::stable_sort(list.begin(), list.end(), [&](std::int32_t a, std::int32_t b) {
      return draft.values[static_cast<std::size_t>(a)] > draft.values[static_cast<std::size_t>(b)];
    });
  }
  return kids;
}

std::vector<double> as_vector(const TokenDistribution& d) { return {d.probs().begin(), d.probs().end()}; }

bool renormalize(std::vector<double>& w) {
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(sum > 1e-300)) return false;
  for (double& x : w) x /= sum;
  return true;
}

struct TreeEnumerator {
  const MaskedTargets& targets;
  const FlatDraft& draft;
  std::vector<std::vector<std::int32_t>> kids;
  VerificationLaw law;
  std::vector<std::vector<double>> next_mass;

  // `node` is -1 for the root. `reach` is the probability of arriving there
  // with `prefix` accepted.
  void visit(std::int32_t node, double reach, Context& prefix) {
    const auto slot = static_cast<std::size_t>(node + 1);
    law.reach[slot] += reach;
    std::vector<double> p = as_vector(targets.after(node));
    const std::size_t vocab = p.size();
    auto& mass = next_mass[slot];
    if (mass.empty()) mass.assign(vocab, 0.0);

    const bool sampled = draft.proposal == Proposal::kSampled;
    std::vector<double> q;
    if (sampled && !kids[slot].empty()) {
      q = as_vector(draft.draft_dists[static_cast<std::size_t>(kids[slot].front())]);
    }

    double stay = 1.0;
    for (std::int32_t c : kids[slot]) {
      if (!(stay > 0.0)) break;
      const TokenId tok = draft.tokens[static_cast<std::size_t>(c)];
      const double qt = sampled ? q[tok] : 1.0;
      if (!(qt > 0.0)) continue;
      const double a = std::min(1.0, p[tok] / qt);
      const double take = stay * a;
      if (take > 0.0) {
        mass[tok] += reach * take;
        prefix.push_back(tok);
        visit(c, reach * take, prefix);
        prefix.pop_back();
      }
      stay *= 1.0 - a;
      std::vector<double> r = p;
      if (sampled) {
        for (std::size_t v = 0; v < vocab; ++v) r[v] = std::max(0.0, p[v] - q[v]);
        q[tok] = 0.0;
        renormalize(q);
      } else {
        r[tok] = 0.0;
      }
      if (renormalize(r)) p = std::move(r);
    }
    if (!(stay > 0.0)) return;
    for (std::size_t t = 0; t < vocab; ++t) {
      const double w = reach * stay * p[t];
      if (!(w > 0.0)) continue;
      mass[t] += w;
      prefix.push_back(static_cast<TokenId>(t));
      law.sequences[prefix] += w;
      prefix.pop_back();
    }
  }
};

VerificationLaw enumerate_verification(const MaskedTargets& targets, const FlatDraft& draft) {
  TreeEnumerator e{targets, draft, sibling_order(draft), {}, {}};
  e.law.reach.assign(draft.size() + 1, 0.0);
  e.next_mass.resize(draft.size() + 1);
  Context prefix;
  e.visit(kNoParent, 1.0, prefix);
  e.law.next_token.resize(draft.size() + 1);
  for (std::size_t i = 0; i <= draft.size(); ++i) {
    if (e.law.reach[i] > 0.0 && !e.next_mass[i].empty()) {
      auto w = e.next_mass[i];
      for (double& x : w) x /= e.law.reach[i];
      e.law.next_token[i] = TokenDistribution::normalized(std::move(w));
    }
  }
  return e.law;
}

std::map<Context, double> greedy_cycle(const MaskedTargets& targets, const FlatDraft& draft) {
  const auto kids = sibling_order(draft);
  Context out;
  std::int32_t node = kNoParent;
  while (true) {
    const TokenId best = targets.after(node).argmax();
    std::int32_t next = kNoParent;
    for (std::int32_t c : kids[static_cast<std::size_t>(node + 1)]) {
      if (draft.tokens[static_cast<std::size_t>(c)] == best) {
        next = c;
        break;
      }
    }
    out.push_back(best);
    if (next == kNoParent) return {{out, 1.0}};
    node = next;
  }
}

// Every chain the sampled drafter can produce, with its probability.
void enumerate_chains(const LanguageModel& draft_model, const Context& ctx, int depth,
                      Context& path, std::vector<TokenDistribution>& dists, double prob,
                      const std::function<void(const Context&, const std::vector<TokenDistribution>&, double)>& fn) {
  if (static_cast<int>(path.size()) == depth) {
    fn(path, dists, prob);
    return;
  }
  Context full = ctx;
  full.insert(full.end(), path.begin(), path.end());
  const TokenDistribution q = draft_model.next_distribution(full);
  for (std::size_t t = 0; t < q.size(); ++t) {
    if (!(q[static_cast<TokenId>(t)] > 0.0)) continue;
    path.push_back(static_cast<TokenId>(t));
    dists.push_back(q);
    enumerate_chains(draft_model, ctx, depth, path, dists, prob * q[static_cast<TokenId>(t)], fn);
    dists.pop_back();
    path.pop_back();
  }
}

}  // namespace

double ExactSequenceDistribution::total() const {
  double s = 0.0;
  for (const auto& [seq, p] : probs) s += p;
  return s;
}

ExactSequenceDistribution ExactSequenceDistribution::drop_last() const {
  if (horizon == 0) throw InvalidInput("cannot shorten an empty-horizon distribution");
  ExactSequenceDistribution out;
  out.horizon = horizon - 1;
  for (const auto& [seq, p] : probs) out.probs[Context(seq.begin(), seq.end() - 1)] += p;
  return out;
}

double ExactSequenceDistribution::prob(const Context& seq) const {
  const auto it = probs.find(seq);
  return it == probs.end() ? 0.0 : it->second;
}

ExactSequenceDistribution exact_autoregressive(const LanguageModel& target, const Context& prompt,
                                               std::size_t horizon) {
  guard_sequences(target.vocab_size(), horizon, "exact_autoregressive");
  check_in_vocabulary(prompt, target.vocab_size());
  ExactSequenceDistribution out;
  out.horizon = horizon;
  Context ctx = prompt;
  Context seq;
  std::function<void(double)> rec = [&](double prob) {
    if (seq.size() == horizon) {
      out.probs[seq] += prob;
      return;
    }
    const TokenDistribution p = target.next_distribution(ctx);
    for (std::size_t t = 0; t < p.size(); ++t) {
      const double pt = p[static_cast<TokenId>(t)];
      if (!(pt > 0.0)) continue;
      seq.push_back(static_cast<TokenId>(t));
      ctx.push_back(static_cast<TokenId>(t));
      rec(prob * pt);
      ctx.pop_back();
      seq.pop_back();
    }
  };
  rec(1.0);
  return out;
}

VerificationLaw exact_tree_verification_marginal(const MaskedTargets& targets,
                                                 const FlatDraft& draft,
                                                 const OracleLimits& limits) {
  if (draft.size() > limits.max_draft_size) {
    throw GuardExceeded("draft of " + std::to_string(draft.size()) +
                        " nodes exceeds the oracle limit of " +
                        std::to_string(limits.max_draft_size));
  }
  if (targets.root.size() > limits.max_vocab) {
    throw GuardExceeded("vocabulary of " + std::to_string(targets.root.size()) +
                        " exceeds the oracle limit of " + std::to_string(limits.max_vocab));
  }
  if (targets.at.size() != draft.size()) throw InvalidInput("one target distribution per draft node required");
  check_flat_draft(draft);
  return enumerate_verification(targets, draft);
}

TokenDistribution exact_sampled_candidates_marginal(const TokenDistribution& p,
                                                    const TokenDistribution& q,
                                                    std::size_t n_candidates) {
  if (p.size() != q.size()) throw InvalidInput("p and q have different vocabularies");
  const std::size_t vocab = p.size();
  std::size_t support = 0;
  for (std::size_t t = 0; t < vocab; ++t) support += q[static_cast<TokenId>(t)] > 0.0 ? 1 : 0;
  if (n_candidates == 0 || n_candidates > support) {
    throw InvalidInput("n_candidates must be between 1 and the size of q's support");
  }
  if (checked_power(vocab, n_candidates, kMaxEnumeratedSequences) > kMaxEnumeratedSequences) {
    throw GuardExceeded("too many candidate orderings to enumerate");
  }

  std::vector<double> emitted(vocab, 0.0);
  Context drawn;
  std::function<void(double, double)> rec = [&](double prob, double used) {
    if (drawn.size() == n_candidates) {
      // One level of siblings under a root, tried in draw order.
      std::vector<std::int32_t> parents(drawn.size(), kNoParent);
      std::vector<double> values(drawn.size());
      for (std::size_t i = 0; i < drawn.size(); ++i) values[i] = std::ldexp(1.0, -static_cast<int>(i + 1));
      std::vector<double> conf(drawn.size());
      for (std::size_t i = 0; i < drawn.size(); ++i) conf[i] = q[drawn[i]];
      FlatDraft d = make_flat_draft(drawn, parents, std::vector<TokenDistribution>(drawn.size(), q),
                                    conf, values, Proposal::kSampled);
      MaskedTargets targets{p, std::vector<TokenDistribution>(drawn.size(), p)};
      const auto law = enumerate_verification(targets, d);
      for (const auto& [seq, w] : law.sequences) emitted[seq.front()] += prob * w;
      return;
    }
    for (std::size_t t = 0; t < vocab; ++t) {
      const double qt = q[static_cast<TokenId>(t)];
      if (!(qt > 0.0)) continue;
      if (std::find(drawn.begin(), drawn.end(), static_cast<TokenId>(t)) != drawn.end()) continue;
      drawn.push_back(static_cast<TokenId>(t));
      rec(prob * qt / (1.0 - used), used + qt);
      drawn.pop_back();
    }
  };
  rec(1.0, 0.0);
  return TokenDistribution::normalized(std::move(emitted));
}

std::map<Context, double> exact_cycle_law(const LanguageModel& target,
                                          const LanguageModel& draft_model, const Context& ctx,
                                          const EngineConfig& cfg) {
  cfg.validate();
  const bool greedy = cfg.temperature == 0.0;
  if (cfg.mode == Mode::kVanilla) {
    const TokenDistribution p = target.next_distribution(ctx);
    if (greedy) return {{Context{p.argmax()}, 1.0}};
    std::map<Context, double> out;
    for (std::size_t t = 0; t < p.size(); ++t) {
      if (p[static_cast<TokenId>(t)] > 0.0) out[Context{static_cast<TokenId>(t)}] = p[static_cast<TokenId>(t)];
    }
    return out;
  }

  if (cfg.mode == Mode::kChainSps && !greedy) {
    guard_sequences(draft_model.vocab_size(), static_cast<std::size_t>(cfg.depth), "exact_cycle_law");
    std::map<Context, double> out;
    Context path;
    std::vector<TokenDistribution> dists;
    enumerate_chains(draft_model, ctx, cfg.depth, path, dists, 1.0,
                     [&](const Context& chain, const std::vector<TokenDistribution>& qs, double prob) {
                       std::vector<std::int32_t> parents(chain.size());
                       std::vector<double> conf(chain.size()), values(chain.size());
                       double v = 1.0;
                       for (std::size_t i = 0; i < chain.size(); ++i) {
                         parents[i] = static_cast<std::int32_t>(i) - 1;
                         conf[i] = qs[i][chain[i]];
                         v *= conf[i];
                         values[i] = v;
                       }
                       const FlatDraft d = make_flat_draft(chain, parents, qs, conf, values, Proposal::kSampled);
                       const auto law = enumerate_verification(compute_masked_target_dists(target, ctx, d), d);
                       for (const auto& [seq, w] : law.sequences) out[seq] += prob * w;
                     });
    return out;
  }

  // Deterministic drafters never touch the generator.
  Rng unused(0);
  const FlatDraft d = build_cycle_draft(draft_model, ctx, cfg, unused);
  const MaskedTargets targets = compute_masked_target_dists(target, ctx, d);
  if (greedy) return greedy_cycle(targets, d);
  return enumerate_verification(targets, d).sequences;
}

ExactSequenceDistribution exact_generation_law(const LanguageModel& target,
                                               const LanguageModel& draft_model,
                                               const Context& prompt, std::size_t horizon,
                                               const EngineConfig& cfg) {
  cfg.validate();
  guard_sequences(target.vocab_size(), horizon, "exact_generation_law");
  if (target.vocab_size() != draft_model.vocab_size()) {
    throw InvalidInput("target and draft models have different vocabularies");
  }
  check_in_vocabulary(prompt, target.vocab_size());

  std::optional<TemperedModel> tt, td;
  if (cfg.temperature > 0.0 && cfg.temperature != 1.0) {
    tt.emplace(target, cfg.temperature);
    td.emplace(draft_model, cfg.temperature);
  }
  const LanguageModel& tgt = tt ? static_cast<const LanguageModel&>(*tt) : target;
  const LanguageModel& drf = td ? static_cast<const LanguageModel&>(*td) : draft_model;

  std::map<Context, std::map<Context, double>> memo;
  ExactSequenceDistribution out;
  out.horizon = horizon;
  Context emitted;
  std::function<void(double)> rec = [&](double prob) {
    if (emitted.size() >= horizon) {
      out.probs[emitted] += prob;
      return;
    }
    Context ctx = prompt;
    ctx.insert(ctx.end(), emitted.begin(), emitted.end());
    auto it = memo.find(ctx);
    if (it == memo.end()) it = memo.emplace(ctx, exact_cycle_law(tgt, drf, ctx, cfg)).first;
    for (const auto& [seq, w] : it->second) {
      const std::size_t before = emitted.size();
      const std::size_t take = std::min(seq.size(), horizon - before);
      emitted.insert(emitted.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(take));
      rec(prob * w);
      emitted.resize(before);
    }
  };
  rec(1.0);
  return out;
}

double max_abs_difference(const ExactSequenceDistribution& a, const ExactSequenceDistribution& b) {
  double worst = 0.0;
  for (const auto& [seq, p] : a.probs) worst = std::max(worst, std::abs(p - b.prob(seq)));
  for (const auto& [seq, p] : b.probs) worst = std::max(worst, std::abs(p - a.prob(seq)));
  return worst;
}

EquivalenceVerdict chi_square_equivalence(const std::map<Context, std::uint64_t>& observed,
                                          const ExactSequenceDistribution& expected, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must be in (0, 1)");
  double max_p = 0.0;
  for (const auto& [seq, p] : expected.probs) max_p = std::max(max_p, p);
  if (!(max_p > 0.0)) throw InvalidInput("expected distribution is empty");

  EquivalenceVerdict v;
  v.alpha = alpha;
  for (const auto& [seq, c] : observed) v.n_samples += c;
  const auto n = static_cast<double>(v.n_samples);
  if (n * max_p < 5.0) {
    const auto required = static_cast<std::uint64_t>(std::ceil(5.0 / max_p - 1e-9));
    throw InsufficientSamples("chi-square test needs at least " + std::to_string(required) +
                                  " samples, got " + std::to_string(v.n_samples),
                              required);
  }

  // Total variation over the union of supports.
  double tv = 0.0;
  bool outside_support = false;
  for (const auto& [seq, p] : expected.probs) {
    const auto it = observed.find(seq);
    const double f = it == observed.end() ? 0.0 : static_cast<double>(it->second) / n;
    tv += std::abs(f - p);
  }
  for (const auto& [seq, c] : observed) {
    if (c > 0 && !(expected.prob(seq) > 0.0)) {
      outside_support = true;
      tv += static_cast<double>(c) / n;
    }
  }
  v.tv_distance = 0.5 * tv;

  struct Cell {
    double obs = 0.0;
    double exp = 0.0;
  };
  std::vector<Cell> cells;
  Cell pool;
  for (const auto& [seq, p] : expected.probs) {
    if (!(p > 0.0)) continue;
    const auto it = observed.find(seq);
    const double o = it == observed.end() ? 0.0 : static_cast<double>(it->second);
    const double e = n * p;
    if (e >= 5.0) {
      cells.push_back({o, e});
    } else {
      pool.obs += o;
      pool.exp += e;
    }
  }
  if (pool.exp > 0.0) {
    if (pool.exp >= 5.0) {
      cells.push_back(pool);
    } else {
      auto smallest = std::min_element(cells.begin(), cells.end(),
                                       [](const Cell& a, const Cell& b) { return a.exp < b.exp; });
      smallest->obs += pool.obs;
      smallest->exp += pool.exp;
    }
  }
  v.cells = cells.size();
  v.degrees_of_freedom = cells.empty() ? 0 : cells.size() - 1;

  if (outside_support) {
    v.statistic = std::numeric_limits<double>::infinity();
    v.p_value = 0.0;
    v.pass = false;
    return v;
  }
  for (const auto& c : cells) v.statistic += (c.obs - c.exp) * (c.obs - c.exp) / c.exp;
  if (v.degrees_of_freedom == 0) {
    v.p_value = 1.0;
  } else {
    const boost::math::chi_squared dist(static_cast<double>(v.degrees_of_freedom));
    v.p_value = boost::math::cdf(boost::math::complement(dist, v.statistic));
  }
  v.pass = v.p_value > alpha;
  return v;
}

std::uint64_t for_each_draft_shape(std::size_t max_nodes, std::size_t vocab,
                                   const std::function<void(const FlatDraft&)>& fn) {
  if (vocab == 0) throw InvalidInput("vocabulary must be non-empty");
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;
  std::vector<double> values;
  std::uint64_t count = 0;

  auto emit = [&] {
    std::vector<double> conf(tokens.size(), 0.5);
    fn(make_flat_draft(tokens, parents, {}, conf, values));
    ++count;
  };

  // Decide the children of `node` (kNoParent first, then flat positions in
  // order), appending them at the end so the result stays breadth-first.
  std::function<void(std::int32_t)> expand;
  std::function<void(std::int32_t, std::size_t, std::vector<bool>&)> pick;

  expand = [&](std::int32_t node) {
    if (node == static_cast<std::int32_t>(tokens.size())) {
      emit();
      return;
    }
    std::vector<bool> used(vocab, false);
    pick(node, 0, used);
  };

  // Either stop adding children to `node` or add one more distinct token.
  pick = [&](std::int32_t node, std::size_t added, std::vector<bool>& used) {
    expand(node + 1);
    if (tokens.size() >= max_nodes || added >= vocab) return;
    const double parent_value = node == kNoParent ? 1.0 : values[static_cast<std::size_t>(node)];
    for (std::size_t t = 0; t < vocab; ++t) {
      if (used[t]) continue;
      used[t] = true;
      tokens.push_back(static_cast<TokenId>(t));
      parents.push_back(node);
      values.push_back(parent_value * std::ldexp(1.0, -static_cast<int>(added + 1)));
      pick(node, added + 1, used);
      values.pop_back();
      parents.pop_back();
      tokens.pop_back();
      used[t] = false;
    }
  };

  expand(kNoParent);
  return count;
}

}  // namespace dyntree
