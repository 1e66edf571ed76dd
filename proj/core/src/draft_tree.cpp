// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/draft_tree.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

// Adds up to `count` children (the most probable draft tokens) to `node`.
void add_children(DraftTree& tree, std::int32_t node, const LanguageModel& draft, int count,
                  std::vector<std::int32_t>& new_layer) {
  auto& parent = tree.nodes[static_cast<std::size_t>(node)];
  if (!parent.next_dist) parent.next_dist = draft.next_distribution(tree.path_context(node));
  // Copy out what we need; push_back below may reallocate `nodes`.
  const TokenDistribution dist = *parent.next_dist;
  const double parent_value = parent.value;
  const int child_depth = parent.depth + 1;

  for (TokenId t : dist.top_tokens(static_cast<std::size_t>(std::max(count, 0)))) {
    const auto index = static_cast<std::int32_t>(tree.nodes.size());
    DraftNode child;
    child.token = t;
    child.confidence = dist[t];
    child.value = dist[t] * parent_value;
    child.parent = node;
    child.depth = child_depth;
    tree.nodes.push_back(std::move(child));
    tree.nodes[static_cast<std::size_t>(node)].children.push_back(index);
    new_layer.push_back(index);
  }
}

double score(const DraftNode& node, ExpansionKey key) {
  return key == ExpansionKey::kValue ? node.value : node.confidence;
}

}  // namespace

// ---------------------------------------------------------------------------
// DraftTree

DraftTree DraftTree::rooted_at(Context ctx) {
  DraftTree tree;
  DraftNode root;
  root.token = ctx.empty() ? 0 : ctx.back();
  tree.root_context = std::move(ctx);
  tree.nodes.push_back(std::move(root));
  tree.layers.push_back({0});
  return tree;
}

Context DraftTree::path_context(std::int32_t node) const {
  std::vector<TokenId> path;
  for (std::int32_t n = node; n > 0; n = nodes[static_cast<std::size_t>(n)].parent) {
    path.push_back(nodes[static_cast<std::size_t>(n)].token);
  }
  Context ctx;
  ctx.reserve(root_context.size() + path.size());
  ctx.insert(ctx.end(), root_context.begin(), root_context.end());
  ctx.insert(ctx.end(), path.rbegin(), path.rend());
  return ctx;
}

std::vector<std::int32_t> rank_layer(const DraftTree& tree, std::span<const std::int32_t> layer,
                                     ExpansionKey key) {
  std::vector<std::int32_t> ranked(layer.begin(), layer.end());
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::int32_t a, std::int32_t b) {
    const double sa = score(tree.nodes[static_cast<std::size_t>(a)], key);
    const double sb = score(tree.nodes[static_cast<std::size_t>(b)], key);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return ranked;
}

void expand_layer(DraftTree& tree, const LanguageModel& draft, int k, int branch,
                  ExpansionKey key) {
  if (tree.layers.empty() || tree.nodes.empty()) throw InvalidState("expand_layer on an empty tree");
  if (k < 1 || branch < 1) throw InvalidInput("expand_layer needs k >= 1 and branch >= 1");

  auto ranked = rank_layer(tree, tree.layers.back(), key);
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(k)));

  std::vector<std::int32_t> new_layer;
  for (std::int32_t node : ranked) add_children(tree, node, draft, branch, new_layer);
  tree.layers.push_back(std::move(new_layer));
}

DraftTree build_tree(const Context& ctx, const LanguageModel& draft, int depth, int k, int branch,
                     ExpansionKey key) {
  if (depth < 1) throw InvalidInput("build_tree needs depth >= 1");
  DraftTree tree = DraftTree::rooted_at(ctx);
  for (int d = 0; d < depth; ++d) expand_layer(tree, draft, k, branch, key);
  return tree;
}

// ---------------------------------------------------------------------------
// Flat drafts

AncestorMask::AncestorMask(std::span<const std::int32_t> parents)
    : size_(parents.size()), bits_(parents.size() * parents.size(), 0) {
  for (std::size_t i = 0; i < size_; ++i) {
    set(i, i, true);
    const std::int32_t p = parents[i];
    if (p == kNoParent) continue;
    // Row of an earlier position already holds its full ancestor set.
    for (std::size_t j = 0; j <= static_cast<std::size_t>(p); ++j) {
      if ((*this)(static_cast<std::size_t>(p), j)) set(i, j, true);
    }
  }
}

std::string AncestorMask::row_bits(std::size_t row) const {
  std::string bits(size_, '0');
  for (std::size_t j = 0; j < size_; ++j) {
    if ((*this)(row, j)) bits[j] = '1';
  }
  return bits;
}

std::vector<std::vector<std::int32_t>> FlatDraft::children_by_value() const {
  std::vector<std::vector<std::int32_t>> children(size() + 1);
  for (std::size_t i = 0; i < size(); ++i) {
    children[static_cast<std::size_t>(parents[i] + 1)].push_back(static_cast<std::int32_t>(i));
  }
  for (auto& list : children) {
    std::stable_sort(list.begin(), list.end(), [this](std::int32_t a, std::int32_t b) {
      return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    });
  }
  return children;
}

std::vector<TokenId> FlatDraft::visible_tokens(std::size_t pos) const {
  std::vector<TokenId> out;
  for (std::size_t j = 0; j <= pos; ++j) {
    if (mask(pos, j)) out.push_back(tokens[j]);
  }
  return out;
}

FlatDraft make_flat_draft(std::vector<TokenId> tokens, std::vector<std::int32_t> parents,
                          std::vector<TokenDistribution> draft_dists,
                          std::vector<double> confidences, std::vector<double> values,
                          Proposal proposal) {
  const std::size_t m = tokens.size();
  if (parents.size() != m || confidences.size() != m || values.size() != m) {
    throw InvalidInput("flat draft fields have mismatched lengths");
  }
  if (!draft_dists.empty() && draft_dists.size() != m) {
    throw InvalidInput("flat draft has the wrong number of draft distributions");
  }
  if (proposal == Proposal::kSampled && draft_dists.empty()) {
    throw InvalidInput("a sampled draft needs its draft distributions");
  }
  FlatDraft flat;
  flat.depths.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::int32_t p = parents[i];
    if (p != kNoParent && (p < 0 || static_cast<std::size_t>(p) >= i)) {
      throw InvalidInput("flat draft parents are not topologically ordered at position " +
                         std::to_string(i));
    }
    flat.depths[i] = p == kNoParent ? 1 : flat.depths[static_cast<std::size_t>(p)] + 1;
  }

  flat.layer_ranks.assign(m, 0);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (flat.depths[a] != flat.depths[b]) return flat.depths[a] < flat.depths[b];
    return values[a] > values[b];
  });
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t pos = order[i];
    const bool new_layer = i == 0 || flat.depths[order[i - 1]] != flat.depths[pos];
    flat.layer_ranks[pos] = new_layer ? 1 : flat.layer_ranks[order[i - 1]] + 1;
  }

  flat.mask = AncestorMask(parents);
  flat.tokens = std::move(tokens);
  flat.parents = std::move(parents);
  flat.draft_dists = std::move(draft_dists);
  flat.confidences = std::move(confidences);
  flat.values = std::move(values);
  flat.proposal = proposal;
  return flat;
}

void check_flat_draft(const FlatDraft& draft) {
  const std::size_t m = draft.size();
  if (draft.parents.size() != m || draft.mask.size() != m) {
    throw InvalidInput("flat draft mask or parents have the wrong size");
  }
  std::vector<std::uint8_t> ancestors(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::int32_t p = draft.parents[i];
    if (p != kNoParent && (p < 0 || static_cast<std::size_t>(p) >= i)) {
      throw InvalidInput("flat draft parents are not topologically ordered");
    }
    ancestors[i * m + i] = 1;
    if (p != kNoParent) {
      for (std::size_t j = 0; j < m; ++j) {
        if (ancestors[static_cast<std::size_t>(p) * m + j]) ancestors[i * m + j] = 1;
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (draft.mask(i, j) != (ancestors[i * m + j] != 0)) {
        throw InvalidInput("attention mask lets position " + std::to_string(i) +
                           " see non-ancestor " + std::to_string(j));
      }
    }
  }
}

FlatDraft flatten_nodes(const DraftTree& tree, std::span<const std::int32_t> selected) {
  std::vector<std::uint8_t> chosen(tree.nodes.size(), 0);
  for (std::int32_t n : selected) {
    if (n <= 0 || static_cast<std::size_t>(n) >= tree.nodes.size()) {
      throw InvalidInput("selected node index out of range");
    }
    chosen[static_cast<std::size_t>(n)] = 1;
  }
  for (std::int32_t n : selected) {
    const std::int32_t p = tree.nodes[static_cast<std::size_t>(n)].parent;
    if (p > 0 && !chosen[static_cast<std::size_t>(p)]) {
      throw InvalidState("draft selection is not connected: node " + std::to_string(n) +
                         " selected without its parent");
    }
  }

  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;
  std::vector<TokenDistribution> dists;
  std::vector<double> confidences, values;
  std::vector<std::int32_t> flat_index(tree.nodes.size(), kNoParent);

  std::deque<std::int32_t> queue{0};
  while (!queue.empty()) {
    const std::int32_t n = queue.front();
    queue.pop_front();
    const DraftNode& node = tree.nodes[static_cast<std::size_t>(n)];
    for (std::int32_t c : node.children) {
      if (!chosen[static_cast<std::size_t>(c)]) continue;
      const DraftNode& child = tree.nodes[static_cast<std::size_t>(c)];
      flat_index[static_cast<std::size_t>(c)] = static_cast<std::int32_t>(tokens.size());
      tokens.push_back(child.token);
      parents.push_back(n == 0 ? kNoParent : flat_index[static_cast<std::size_t>(n)]);
      dists.push_back(*node.next_dist);
      confidences.push_back(child.confidence);
      values.push_back(child.value);
      queue.push_back(c);
    }
  }
  return make_flat_draft(std::move(tokens), std::move(parents), std::move(dists),
                         std::move(confidences), std::move(values), Proposal::kDeterministic);
}

FlatDraft rerank_and_flatten(const DraftTree& tree, std::size_t m) {
  if (m < 1) throw InvalidInput("rerank_and_flatten needs m >= 1");
  std::vector<std::int32_t> all(tree.draft_size());
  std::iota(all.begin(), all.end(), std::int32_t{1});
  const std::size_t take = std::min(m, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      const DraftNode& na = tree.nodes[static_cast<std::size_t>(a)];
                      const DraftNode& nb = tree.nodes[static_cast<std::size_t>(b)];
                      if (na.value != nb.value) return na.value > nb.value;
                      if (na.depth != nb.depth) return na.depth < nb.depth;
                      return a < b;
                    });
  all.resize(take);
  // flatten_nodes rejects a selection that is not closed under parents.
  return flatten_nodes(tree, all);
}

FlatDraft flatten_expansion(const DraftTree& tree, int k, std::size_t m, ExpansionKey key) {
  if (m < 1 || k < 1) throw InvalidInput("flatten_expansion needs k >= 1 and m >= 1");
  std::vector<std::vector<std::int32_t>> picked;
  std::size_t total = 0;
  for (std::size_t d = 1; d < tree.layers.size(); ++d) {
    auto ranked = rank_layer(tree, tree.layers[d], key);
    ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(k)));
    total += ranked.size();
    picked.push_back(std::move(ranked));
  }
  // Over budget: drop the lowest-ranked nodes of the deepest layers first.
  for (auto layer = picked.rbegin(); total > m && layer != picked.rend(); ++layer) {
    while (total > m && !layer->empty()) {
      layer->pop_back();
      --total;
    }
  }
  std::vector<std::int32_t> selected;
  for (const auto& layer : picked) selected.insert(selected.end(), layer.begin(), layer.end());
  return flatten_nodes(tree, selected);
}

FlatDraft static_tree(const Context& ctx, const LanguageModel& draft, std::span<const int> shape,
                      int branch) {
  if (shape.empty()) throw InvalidInput("static_tree needs a non-empty shape");
  if (branch < 1) throw InvalidInput("static_tree needs branch >= 1");
  DraftTree tree = DraftTree::rooted_at(ctx);
  for (int width : shape) {
    if (width < 1) throw InvalidInput("static_tree layer widths must be positive");
    std::vector<std::int32_t> new_layer;
    int remaining = width;
    for (std::int32_t parent : tree.layers.back()) {
      if (remaining <= 0) break;
      const auto before = new_layer.size();
      add_children(tree, parent, draft, std::min(branch, remaining), new_layer);
      remaining -= static_cast<int>(new_layer.size() - before);
    }
    tree.layers.push_back(std::move(new_layer));
  }
  std::vector<std::int32_t> all(tree.draft_size());
  std::iota(all.begin(), all.end(), std::int32_t{1});
  return flatten_nodes(tree, all);
}

std::vector<int> default_static_shape(int depth, std::size_t m) {
  if (depth < 1 || m < 1) throw InvalidInput("default_static_shape needs depth >= 1 and m >= 1");
  const auto layers = static_cast<std::size_t>(depth);
  std::vector<int> shape;
  for (std::size_t d = 0; d < layers; ++d) {
    const std::size_t width = m / layers + (d < m % layers ? 1 : 0);
    if (width == 0) break;
    shape.push_back(static_cast<int>(width));
  }
  return shape;
}

FlatDraft sampled_chain(const Context& ctx, const LanguageModel& draft, int depth, Rng& rng) {
  if (depth < 1) throw InvalidInput("sampled_chain needs depth >= 1");
  Context path = ctx;
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;
  std::vector<TokenDistribution> dists;
  std::vector<double> confidences, values;
  double value = 1.0;
  for (int i = 0; i < depth; ++i) {
    TokenDistribution q = draft.next_distribution(path);
    const TokenId t = rng.sample(q);
    value *= q[t];
    tokens.push_back(t);
    parents.push_back(i == 0 ? kNoParent : i - 1);
    confidences.push_back(q[t]);
    values.push_back(value);
    dists.push_back(std::move(q));
    path.push_back(t);
  }
  return make_flat_draft(std::move(tokens), std::move(parents), std::move(dists),
                         std::move(confidences), std::move(values), Proposal::kSampled);
}

}  // namespace dyntree
