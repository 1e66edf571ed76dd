// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "dyntree/draft_tree.hpp"
#include "dyntree/error.hpp"
#include "test_support.hpp"

namespace dyntree {
namespace {

using testing::dist;
using testing::FunctionModel;

constexpr TokenId A = 0, B = 1, X = 2, Y = 3;

// Root: A 0.6, B 0.4. After A: X 0.8, Y 0.1. Everything else is uniform.
FunctionModel two_level_model() {
  return FunctionModel(4, [](std::span<const TokenId> ctx) {
    if (ctx.size() == 1) return dist({0.6, 0.4, 0.0, 0.0});
    if (ctx.size() == 2 && ctx.back() == A) return dist({0.05, 0.05, 0.8, 0.1});
    return TokenDistribution::uniform(4);
  });
}

const Context kPrompt{3};

std::vector<TokenId> layer_tokens(const DraftTree& t, std::size_t d) {
  std::vector<TokenId> out;
  for (auto i : t.layers[d]) out.push_back(t.nodes[static_cast<std::size_t>(i)].token);
  return out;
}

TEST(BuildTree, ExpandsOnlyTheTopKByValue) {
  const auto model = two_level_model();
  const auto tree = build_tree(kPrompt, model, 2, 1, 2);
  ASSERT_EQ(tree.layers.size(), 3u);
  EXPECT_EQ(layer_tokens(tree, 1), (std::vector<TokenId>{A, B}));
  EXPECT_EQ(layer_tokens(tree, 2), (std::vector<TokenId>{X, Y}));
  for (auto i : tree.layers[2]) EXPECT_EQ(tree.nodes[static_cast<std::size_t>(i)].parent, tree.layers[1][0]);
  EXPECT_NEAR(tree.nodes[static_cast<std::size_t>(tree.layers[2][0])].value, 0.48, 1e-15);
  EXPECT_NEAR(tree.nodes[static_cast<std::size_t>(tree.layers[2][1])].value, 0.06, 1e-15);
}

TEST(BuildTree, KLargerThanLayerExpandsEverything) {
  const auto model = two_level_model();
  const auto tree = build_tree(kPrompt, model, 2, 50, 2);
  EXPECT_EQ(tree.layers[2].size(), 4u);
}

TEST(BuildTree, DepthOneIsTopBranchTokens) {
  const FunctionModel model(5, [](std::span<const TokenId>) { return dist({0.05, 0.5, 0.15, 0.3, 0.0}); });
  const auto tree = build_tree(Context{0}, model, 1, 10, 3);
  EXPECT_EQ(tree.draft_size(), 3u);
  EXPECT_EQ(layer_tokens(tree, 1), (std::vector<TokenId>{1, 3, 2}));
}

TEST(BuildTree, ZeroProbabilityTokensAreNeverDrafted) {
  const FunctionModel model(5, [](std::span<const TokenId>) { return dist({0.0, 0.5, 0.0, 0.5, 0.0}); });
  const auto tree = build_tree(Context{0}, model, 2, 10, 5);
  for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
    EXPECT_TRUE(tree.nodes[i].token == 1 || tree.nodes[i].token == 3);
  }
  EXPECT_EQ(tree.layers[1].size(), 2u);
}

TEST(BuildTree, DefaultBudgetBoundsLayerWidth) {
  const auto model = random_model(32, 2, 5, 0.3);
  const auto tree = build_tree(Context{1, 2}, model, 6, 10, 10);
  ASSERT_EQ(tree.layers.size(), 7u);
  EXPECT_LE(tree.layers[1].size(), 10u);
  for (std::size_t d = 2; d < tree.layers.size(); ++d) EXPECT_LE(tree.layers[d].size(), 100u);
}

TEST(BuildTree, DeterministicDraftGivesAChainOfOnes) {
  const FunctionModel model(3, [](std::span<const TokenId> ctx) {
    return TokenDistribution::point_mass(3, (ctx.back() + 1) % 3);
  });
  const auto tree = build_tree(Context{0}, model, 4, 10, 10);
  EXPECT_EQ(tree.draft_size(), 4u);
  for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
    EXPECT_EQ(tree.nodes[i].confidence, 1.0);
    EXPECT_EQ(tree.nodes[i].value, 1.0);
    EXPECT_EQ(tree.nodes[i].depth, static_cast<int>(i));
  }
}

TEST(BuildTree, ConfidenceKeyRanksByLocalProbability) {
  // Layer 2: A-X (conf 0.8, value 0.48), A-Y (0.2, 0.12), B-Y (0.9, 0.36),
  // B-X (0.1, 0.04).
  const FunctionModel model(4, [](std::span<const TokenId> ctx) {
    if (ctx.size() == 1) return dist({0.6, 0.4, 0.0, 0.0});
    if (ctx.size() == 2) return ctx.back() == A ? dist({0.0, 0.0, 0.8, 0.2}) : dist({0.0, 0.0, 0.1, 0.9});
    return TokenDistribution::uniform(4);
  });
  auto tree = build_tree(Context{3}, model, 2, 2, 2);
  auto path = [&](std::int32_t i) {
    const auto& n = tree.nodes[static_cast<std::size_t>(i)];
    return std::make_pair(tree.nodes[static_cast<std::size_t>(n.parent)].token, n.token);
  };
  const auto by_value = rank_layer(tree, tree.layers[2], ExpansionKey::kValue);
  const auto by_conf = rank_layer(tree, tree.layers[2], ExpansionKey::kConfidence);
  EXPECT_EQ(path(by_value[0]), std::make_pair(A, X));
  EXPECT_EQ(path(by_value[1]), std::make_pair(B, Y));
  EXPECT_EQ(path(by_conf[0]), std::make_pair(B, Y));
  EXPECT_EQ(path(by_conf[1]), std::make_pair(A, X));

  auto value_tree = tree;
  expand_layer(value_tree, model, 1, 2, ExpansionKey::kValue);
  expand_layer(tree, model, 1, 2, ExpansionKey::kConfidence);
  auto parent_of_layer3 = [](const DraftTree& t) { return t.nodes[static_cast<std::size_t>(t.layers[3][0])].parent; };
  EXPECT_EQ(parent_of_layer3(value_tree), by_value[0]);
  EXPECT_EQ(parent_of_layer3(tree), by_conf[0]);
}

TEST(Rerank, SelectsGlobalTopMByValue) {
  const auto model = two_level_model();
  const auto tree = build_tree(kPrompt, model, 2, 1, 2);
  const auto flat = rerank_and_flatten(tree, 3);
  // Breadth-first: A, B, then A's child X.
  EXPECT_EQ(flat.tokens, (std::vector<TokenId>{A, B, X}));
  EXPECT_EQ(flat.parents, (std::vector<std::int32_t>{kNoParent, kNoParent, 0}));
  EXPECT_NEAR(flat.values[2], 0.48, 1e-15);
  // Mask rows: A sees {A}, B sees {B}, X sees {A, X}.
  EXPECT_EQ(flat.mask.row_bits(0), "100");
  EXPECT_EQ(flat.mask.row_bits(1), "010");
  EXPECT_EQ(flat.mask.row_bits(2), "101");
  EXPECT_EQ(flat.visible_tokens(2), (std::vector<TokenId>{A, X}));
}

TEST(Rerank, TiesPreferShallowerNodes) {
  // A 0.5, B 0.4; A's child X has confidence 0.8, so value 0.4 ties with B.
  const FunctionModel model(4, [](std::span<const TokenId> ctx) {
    if (ctx.size() == 1) return dist({0.5, 0.4, 0.0, 0.1});
    if (ctx.size() == 2 && ctx.back() == A) return dist({0.0, 0.0, 0.8, 0.2});
    return TokenDistribution::uniform(4);
  });
  const auto tree = build_tree(Context{3}, model, 2, 1, 2);
  const auto flat = rerank_and_flatten(tree, 2);
  EXPECT_EQ(flat.tokens, (std::vector<TokenId>{A, B}));
}

TEST(Rerank, LayerRanksAndChildOrder) {
  const auto model = two_level_model();
  const auto flat = rerank_and_flatten(build_tree(kPrompt, model, 2, 1, 2), 4);
  EXPECT_EQ(flat.depths, (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(flat.layer_ranks, (std::vector<int>{1, 2, 1, 2}));
  const auto kids = flat.children_by_value();
  ASSERT_EQ(kids.size(), 5u);
  EXPECT_EQ(kids[0], (std::vector<std::int32_t>{0, 1}));
  EXPECT_EQ(kids[1], (std::vector<std::int32_t>{2, 3}));
  EXPECT_TRUE(kids[2].empty());
}

TEST(FlatDraft, DisconnectedSelectionIsRejected) {
  const auto model = two_level_model();
  const auto tree = build_tree(kPrompt, model, 2, 1, 2);
  const std::int32_t child_of_a = tree.layers[2][0];
  EXPECT_THROW(flatten_nodes(tree, std::vector<std::int32_t>{child_of_a}), InvalidState);
}

TEST(FlatDraft, MaskMustMatchParents) {
  auto flat = make_flat_draft({0, 1, 2}, {kNoParent, 0, 1}, {}, {0.5, 0.5, 0.5}, {0.5, 0.25, 0.125});
  EXPECT_NO_THROW(check_flat_draft(flat));
  EXPECT_EQ(flat.mask.row_bits(2), "111");
  flat.mask.set(2, 0, false);
  EXPECT_THROW(check_flat_draft(flat), InvalidInput);
  EXPECT_THROW(make_flat_draft({0, 1}, {1, kNoParent}, {}, {0.5, 0.5}, {0.5, 0.5}), InvalidInput);
}

TEST(StaticTree, ShapeTwoTakesTheTwoMostProbableTokens) {
  const FunctionModel model(4, [](std::span<const TokenId>) { return dist({0.1, 0.2, 0.3, 0.4}); });
  const std::vector<int> shape{2};
  const auto flat = static_tree(Context{0}, model, shape, 10);
  EXPECT_EQ(flat.tokens, (std::vector<TokenId>{3, 2}));
}

TEST(StaticTree, UnitShapeIsAChain) {
  const auto model = random_model(6, 1, 8, 1.0);
  const std::vector<int> shape{1, 1, 1};
  const auto flat = static_tree(Context{2}, model, shape, 10);
  EXPECT_EQ(flat.parents, (std::vector<std::int32_t>{kNoParent, 0, 1}));
  Context ctx{2};
  for (TokenId t : flat.tokens) {
    EXPECT_EQ(t, model.next_distribution(ctx).argmax());
    ctx.push_back(t);
  }
}

TEST(StaticTree, FillsLeftToRightWithBranchCap) {
  const auto model = random_model(8, 1, 4, 1.0);
  const std::vector<int> shape{3, 5};
  const auto flat = static_tree(Context{0}, model, shape, 2);
  // The root is capped at 2 children, so layer 1 holds 2 nodes and layer 2
  // gets 2 + 2 of the 5 requested.
  EXPECT_EQ(flat.parents, (std::vector<std::int32_t>{kNoParent, kNoParent, 0, 0, 1, 1}));
  const auto wide = static_tree(Context{0}, model, shape, 3);
  EXPECT_EQ(wide.parents, (std::vector<std::int32_t>{kNoParent, kNoParent, kNoParent, 0, 0, 0, 1, 1}));
}

TEST(StaticTree, Deterministic) {
  const auto model = random_model(8, 2, 4, 0.5);
  const auto shape = default_static_shape(6, 60);
  const auto a = static_tree(Context{1, 2}, model, shape, 10);
  const auto b = static_tree(Context{1, 2}, model, shape, 10);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.parents, b.parents);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(StaticTree, DefaultShapeSplitsTheBudgetEvenly) {
  EXPECT_EQ(default_static_shape(6, 60), (std::vector<int>{10, 10, 10, 10, 10, 10}));
  EXPECT_EQ(default_static_shape(4, 10), (std::vector<int>{3, 3, 2, 2}));
  EXPECT_EQ(default_static_shape(6, 3), (std::vector<int>{1, 1, 1}));
}

TEST(FlattenExpansion, KeepsTheExpansionPicksWithinBudget) {
  const auto model = random_model(32, 2, 5, 0.3);
  const auto tree = build_tree(Context{1, 2}, model, 6, 10, 10);
  const auto flat = flatten_expansion(tree, 10, 60);
  EXPECT_EQ(flat.size(), 60u);
  EXPECT_NO_THROW(check_flat_draft(flat));
  std::map<int, int> per_depth;
  for (int d : flat.depths) ++per_depth[d];
  for (const auto& [d, n] : per_depth) EXPECT_LE(n, 10) << "depth " << d;
  const auto trimmed = flatten_expansion(tree, 10, 25);
  EXPECT_EQ(trimmed.size(), 25u);
  EXPECT_EQ(*std::max_element(trimmed.depths.begin(), trimmed.depths.end()), 3);
}

TEST(SampledChain, DrawsFromTheDraftAndRecordsItsDistributions) {
  const auto model = random_model(4, 1, 2, 1.0);
  Rng rng(3);
  const auto flat = sampled_chain(Context{0}, model, 5, rng);
  EXPECT_EQ(flat.size(), 5u);
  EXPECT_EQ(flat.proposal, Proposal::kSampled);
  Context ctx{0};
  for (std::size_t i = 0; i < flat.size(); ++i) {
    EXPECT_EQ(flat.draft_dists[i], model.next_distribution(ctx));
    EXPECT_EQ(flat.confidences[i], flat.draft_dists[i][flat.tokens[i]]);
    ctx.push_back(flat.tokens[i]);
  }
}

}  // namespace
}  // namespace dyntree
