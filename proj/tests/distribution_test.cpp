// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "dyntree/distribution.hpp"
#include "dyntree/error.hpp"
#include "dyntree/random.hpp"
#include "test_support.hpp"

namespace dyntree {
namespace {

using testing::dist;

TEST(TokenDistribution, RejectsBadVectors) {
  EXPECT_THROW(dist({0.5, 0.6}), InvalidInput);
  EXPECT_THROW(dist({1.2, -0.2}), InvalidInput);
  EXPECT_THROW(dist({NAN, 1.0}), InvalidInput);
  EXPECT_THROW(TokenDistribution::normalized({0.0, 0.0}), InvalidInput);
  EXPECT_NO_THROW(dist({0.25, 0.25, 0.5}));
}

TEST(TokenDistribution, NormalizedDividesBySum) {
  const auto d = TokenDistribution::normalized({1.0, 3.0});
  EXPECT_DOUBLE_EQ(d[0], 0.25);
  EXPECT_DOUBLE_EQ(d[1], 0.75);
}

TEST(TokenDistribution, ArgmaxBreaksTiesTowardLowestId) {
  EXPECT_EQ(dist({0.2, 0.4, 0.4}).argmax(), 1u);
  EXPECT_EQ(TokenDistribution::uniform(5).argmax(), 0u);
}

TEST(TokenDistribution, TopTokensSkipsZerosAndOrdersByProbabilityThenId) {
  const auto d = dist({0.3, 0.0, 0.3, 0.4});
  EXPECT_EQ(d.top_tokens(10), (std::vector<TokenId>{3, 0, 2}));
  EXPECT_EQ(d.top_tokens(2), (std::vector<TokenId>{3, 0}));
  EXPECT_TRUE(d.top_tokens(0).empty());
}

TEST(Temperature, OneIsIdentityAndLowerSharpens) {
  const auto d = dist({0.5, 0.3, 0.2});
  EXPECT_EQ(apply_temperature(d, 1.0), d);
  const auto sharp = apply_temperature(d, 0.5);
  // p^2 renormalized.
  EXPECT_NEAR(sharp[0], 0.25 / 0.38, 1e-12);
  EXPECT_NEAR(sharp[2], 0.04 / 0.38, 1e-12);
  EXPECT_THROW(apply_temperature(d, 0.0), InvalidInput);
}

TEST(Temperature, KeepsZerosAtZero) {
  const auto d = apply_temperature(dist({0.0, 0.9, 0.1}), 2.0);
  EXPECT_EQ(d[0], 0.0);
  EXPECT_GT(d[2], 0.1);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    differs |= x != c.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(Rng, SampleNeverPicksZeroProbabilityTokens) {
  Rng rng(5);
  const auto d = dist({0.0, 0.5, 0.0, 0.5, 0.0});
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 20000; ++i) ++counts[rng.sample(d)];
  EXPECT_EQ(counts[0] + counts[2] + counts[4], 0);
  EXPECT_NEAR(counts[1] / 20000.0, 0.5, 0.02);
}

}  // namespace
}  // namespace dyntree
