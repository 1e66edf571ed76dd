// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include <gtest/gtest.h>

#include "dyntree/error.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/verification.hpp"
#include "test_support.hpp"

namespace dyntree {
namespace {

using testing::dist;

ExactSequenceDistribution first_token_law(const TokenDistribution& p) {
  ExactSequenceDistribution law;
  law.horizon = 1;
  for (TokenId t = 0; t < p.size(); ++t) {
    if (p[t] > 0.0) law.probs[Context{t}] = p[t];
  }
  return law;
}

TokenId first_emitted(const VerificationOutcome& out) {
  return out.accepted.empty() ? out.bonus : out.accepted.front();
}

TEST(AcceptProbability, Examples) {
  const auto p = dist({0.6, 0.2, 0.0, 0.2});
  const auto q = dist({0.3, 0.4, 0.3, 0.0});
  EXPECT_EQ(accept_probability(p, q, 0), 1.0);
  EXPECT_DOUBLE_EQ(accept_probability(p, q, 1), 0.5);
  EXPECT_EQ(accept_probability(p, q, 2), 0.0);
  EXPECT_THROW(accept_probability(p, q, 3), InvalidInput);
}

TEST(Residual, Examples) {
  EXPECT_EQ(residual(dist({0.5, 0.5}), dist({1.0, 0.0})), dist({0.0, 1.0}));
  const auto r = residual(dist({0.5, 0.3, 0.2}), dist({0.6, 0.3, 0.1}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_NEAR(r[2], 1.0, 1e-15);
  EXPECT_THROW(residual(dist({0.5, 0.3, 0.2}), dist({0.5, 0.3, 0.2})), InvalidState);
}

TEST(VerifyChain, PerfectDraftIsFullyAccepted) {
  const auto q = dist({0.2, 0.3, 0.5});
  const auto chain = make_flat_draft({2, 0, 1}, {kNoParent, 0, 1}, {q, q, q}, {0.5, 0.2, 0.3},
                                     {0.5, 0.1, 0.03}, Proposal::kSampled);
  const MaskedTargets targets{q, {q, q, q}};
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto out = verify_chain(targets, chain, rng);
    EXPECT_EQ(out.accepted, chain.tokens);
    EXPECT_EQ(out.cycle_length(), 4u);
  }
}

TEST(VerifyChain, DeterministicDraftOnPointMassTargetsIsFullyAccepted) {
  const auto chain = make_flat_draft({1, 1}, {kNoParent, 0}, {}, {0.9, 0.9}, {0.9, 0.81});
  const auto pm = TokenDistribution::point_mass(2, 1);
  Rng rng(1);
  const auto out = verify_chain({pm, {pm, dist({0.5, 0.5})}}, chain, rng);
  EXPECT_EQ(out.cycle_length(), 3u);
}

TEST(VerifyChain, SampledSingleTokenMarginalMatchesTarget) {
  const auto p = dist({0.7, 0.3});
  const auto q = dist({0.3, 0.7});
  std::map<Context, std::uint64_t> counts;
  for (std::uint64_t i = 0; i < 100'000; ++i) {
    Rng rng(derive_seed(11, i));
    const TokenId x = rng.sample(q);
    const auto d = make_flat_draft({x}, {kNoParent}, {q}, {q[x]}, {q[x]}, Proposal::kSampled);
    ++counts[Context{first_emitted(verify_chain({p, {p}}, d, rng))}];
  }
  EXPECT_TRUE(chi_square_equivalence(counts, first_token_law(p), 0.01).pass);
}

TEST(VerifyChain, StatusesAfterARejection) {
  const auto p = dist({1.0, 0.0});
  const auto chain = make_flat_draft({1, 1, 1}, {kNoParent, 0, 1}, {}, {0.5, 0.5, 0.5}, {0.5, 0.25, 0.125});
  Rng rng(0);
  const auto out = verify_chain({p, {p, p, p}}, chain, rng);
  EXPECT_TRUE(out.accepted.empty());
  EXPECT_EQ(out.bonus, 0u);
  EXPECT_EQ(out.trials[0].status, TrialStatus::kRejected);
  EXPECT_EQ(out.trials[1].status, TrialStatus::kNotReached);
  EXPECT_EQ(out.trials[2].status, TrialStatus::kNotReached);
}

TEST(VerifyChain, RejectsTreesAndMismatchedTargets) {
  const auto u = TokenDistribution::uniform(2);
  const auto tree = make_flat_draft({0, 1}, {kNoParent, kNoParent}, {}, {0.5, 0.5}, {0.5, 0.4});
  Rng rng(0);
  EXPECT_THROW(verify_chain({u, {u, u}}, tree, rng), InvalidInput);
  EXPECT_THROW(verify_tree({u, {u}}, tree, rng), InvalidInput);
}

// Two sampled siblings x, y with p = [0.5, 0.3, 0.2] and q = [0.6, 0.3, 0.1].
class SiblingExample : public ::testing::Test {
 protected:
  const TokenDistribution p = dist({0.5, 0.3, 0.2});
  const TokenDistribution q = dist({0.6, 0.3, 0.1});

  FlatDraft siblings(std::vector<TokenId> tokens, Proposal proposal) const {
    const auto n = tokens.size();
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) values.push_back(0.5 / static_cast<double>(i + 1));
    return make_flat_draft(std::move(tokens), std::vector<std::int32_t>(n, kNoParent),
                           std::vector<TokenDistribution>(n, q), std::vector<double>(n, 0.5), values,
                           proposal);
  }
  MaskedTargets targets(std::size_t n) const { return {p, std::vector<TokenDistribution>(n, p)}; }
};

TEST_F(SiblingExample, FixedCandidatesFollowTheStepwiseRule) {
  // Accept x w.p. 5/6; after rejecting x, p' = [0, 0, 1] and q' = [0, 0.75,
  // 0.25], so y is accepted w.p. 0 and the bonus is z.
  EXPECT_NEAR(accept_probability(p, q, 0), 5.0 / 6.0, 1e-15);
  const auto p1 = residual(p, q);
  EXPECT_NEAR(p1[2], 1.0, 1e-15);
  const auto q1 = TokenDistribution::normalized({0.0, 0.3, 0.1});
  EXPECT_NEAR(q1[1], 0.75, 1e-15);
  EXPECT_EQ(accept_probability(p1, q1, 1), 0.0);

  const auto d = siblings({0, 1}, Proposal::kSampled);
  const auto law = exact_tree_verification_marginal(targets(2), d);
  EXPECT_NEAR(law.next_token[0]->probs()[0], 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(law.next_token[0]->probs()[1], 0.0, 1e-12);
  EXPECT_NEAR(law.next_token[0]->probs()[2], 1.0 / 6.0, 1e-12);

  std::map<Context, std::uint64_t> counts;
  for (std::uint64_t i = 0; i < 100'000; ++i) {
    Rng rng(derive_seed(21, i));
    ++counts[Context{first_emitted(verify_tree(targets(2), d, rng))}];
  }
  EXPECT_TRUE(chi_square_equivalence(counts, first_token_law(*law.next_token[0]), 0.01).pass);
}

TEST_F(SiblingExample, SampledCandidatesReproduceTheTarget) {
  std::map<Context, std::uint64_t> counts;
  for (std::uint64_t i = 0; i < 200'000; ++i) {
    Rng rng(derive_seed(31, i));
    // Two candidates drawn from q without replacement.
    const TokenId first = rng.sample(q);
    std::vector<double> rest(q.probs().begin(), q.probs().end());
    rest[first] = 0.0;
    const TokenId second = rng.sample(TokenDistribution::normalized(rest));
    ++counts[Context{first_emitted(verify_tree(targets(2), siblings({first, second}, Proposal::kSampled), rng))}];
  }
  EXPECT_TRUE(chi_square_equivalence(counts, first_token_law(p), 0.01).pass);
}

TEST_F(SiblingExample, DeterministicCandidatesReproduceTheTarget) {
  const auto d = siblings({0, 1}, Proposal::kDeterministic);
  std::map<Context, std::uint64_t> counts;
  for (std::uint64_t i = 0; i < 100'000; ++i) {
    Rng rng(derive_seed(41, i));
    ++counts[Context{first_emitted(verify_tree(targets(2), d, rng))}];
  }
  EXPECT_TRUE(chi_square_equivalence(counts, first_token_law(p), 0.01).pass);
}

TEST(VerifyTree, MatchesVerifyChainOnChains) {
  const auto p = dist({0.4, 0.35, 0.25});
  const auto q = dist({0.3, 0.3, 0.4});
  for (std::uint64_t s = 0; s < 500; ++s) {
    Rng draw(s);
    const auto chain = sampled_chain(Context{0}, testing::FunctionModel(3, [&](auto) { return q; }), 3, draw);
    const MaskedTargets targets{p, {p, p, p}};
    Rng a(s), b(s);
    const auto x = verify_chain(targets, chain, a);
    const auto y = verify_tree(targets, chain, b);
    EXPECT_EQ(x.accepted, y.accepted);
    EXPECT_EQ(x.bonus, y.bonus);
  }
}

TEST(VerifyTree, AcceptBiasRaisesAcceptance) {
  const auto p = dist({0.5, 0.5});
  const auto d = make_flat_draft({0}, {kNoParent}, {}, {0.5}, {0.5});
  int plain = 0, biased = 0;
  for (std::uint64_t i = 0; i < 40'000; ++i) {
    Rng a(i), b(i);
    plain += verify_tree({p, {p}}, d, a).accepted.empty() ? 0 : 1;
    biased += verify_tree({p, {p}}, d, b, {0.05}).accepted.empty() ? 0 : 1;
  }
  EXPECT_NEAR(plain / 40000.0, 0.5, 0.01);
  EXPECT_NEAR(biased / 40000.0, 0.55, 0.01);
}

TEST(VerifyGreedy, NoMatchingChildMeansImmediateBonus) {
  const auto p = dist({0.1, 0.2, 0.7});
  const auto d = make_flat_draft({0, 1}, {kNoParent, kNoParent}, {}, {0.5, 0.4}, {0.5, 0.4});
  const auto out = verify_greedy({p, {p, p}}, d);
  EXPECT_EQ(out.cycle_length(), 1u);
  EXPECT_EQ(out.bonus, 2u);
  EXPECT_EQ(out.trials[0].status, TrialStatus::kRejected);
  EXPECT_EQ(out.trials[1].status, TrialStatus::kRejected);
}

TEST(VerifyGreedy, FollowsTheArgmaxPath) {
  const auto p0 = dist({0.1, 0.6, 0.3});
  const auto p1 = dist({0.5, 0.2, 0.3});
  // Root children 2 then 1; position 1 (token 1) has child 0.
  const auto d = make_flat_draft({2, 1, 0}, {kNoParent, kNoParent, 1}, {}, {0.5, 0.4, 0.9}, {0.5, 0.4, 0.36});
  const auto out = verify_greedy({p0, {p0, p1, p0}}, d);
  EXPECT_EQ(out.accepted, (std::vector<TokenId>{1, 0}));
  EXPECT_EQ(out.accepted_positions, (std::vector<std::int32_t>{1, 2}));
  EXPECT_EQ(out.bonus, 1u);
  EXPECT_EQ(out.trials[0].status, TrialStatus::kRejected);
}

}  // namespace
}  // namespace dyntree
