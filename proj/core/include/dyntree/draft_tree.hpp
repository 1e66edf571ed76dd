// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dyntree/distribution.hpp"
#include "dyntree/models.hpp"
#include "dyntree/random.hpp"

namespace dyntree {

/// Parent index of top-level draft tokens (their parent is the last accepted
/// token, which is not itself part of the draft).
inline constexpr std::int32_t kNoParent = -1;

struct DraftNode {
  TokenId token = 0;
  /// Draft probability of `token` given its path (c_j).
  double confidence = 1.0;
  /// Product of confidences from the root to this node (V_i). 1 at the root.
  double value = 1.0;
  std::int32_t parent = kNoParent;
  int depth = 0;
  std::vector<std::int32_t> children;
  /// Draft distribution after this node's path. Present once expanded.
  std::optional<TokenDistribution> next_dist;
};

/// Which per-node score picks the nodes to expand in a layer.
enum class ExpansionKey {
  kValue,       ///< global acceptance estimate V_i
  kConfidence,  ///< local confidence c_i only ("w/o value" ablation)
};

/// Growing candidate tree. nodes[0] is the root: the last accepted token,
/// depth 0, value 1. layers[d] lists the node indices at depth d.
struct DraftTree {
  Context root_context;
  std::vector<DraftNode> nodes;
  std::vector<std::vector<std::int32_t>> layers;

  static DraftTree rooted_at(Context ctx);

  /// root_context followed by the tokens on the path root -> node.
  Context path_context(std::int32_t node) const;
  std::size_t draft_size() const noexcept { return nodes.empty() ? 0 : nodes.size() - 1; }
};

/// Indices of `layer` ordered by `key` descending, ties to lower node index.
std::vector<std::int32_t> rank_layer(const DraftTree& tree, std::span<const std::int32_t> layer,
                                     ExpansionKey key);

/// Expands the top-k nodes of the last layer (ranked by `key`); each gets the
/// `branch` most probable draft tokens as children and a new layer is
/// appended. Zero-probability tokens are never drafted.
void expand_layer(DraftTree& tree, const LanguageModel& draft, int k, int branch,
                  ExpansionKey key = ExpansionKey::kValue);

/// Applies expand_layer `depth` times starting from a bare root.
DraftTree build_tree(const Context& ctx, const LanguageModel& draft, int depth, int k, int branch,
                     ExpansionKey key = ExpansionKey::kValue);

/// How draft tokens were chosen, which fixes the acceptance rule.
enum class Proposal {
  /// Picked deterministically (top-k). Verified against a point-mass proposal.
  kDeterministic,
  /// Sampled from draft_dists (without replacement among siblings).
  kSampled,
};

/// Square boolean matrix: (i, j) is true iff j == i or j is an ancestor of i.
class AncestorMask {
 public:
  AncestorMask() = default;
  explicit AncestorMask(std::span<const std::int32_t> parents);

  std::size_t size() const noexcept { return size_; }
  bool operator()(std::size_t row, std::size_t col) const { return bits_[row * size_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool visible) { bits_[row * size_ + col] = visible; }

  /// Row `row` as a string of '0'/'1', column 0 first.
  std::string row_bits(std::size_t row) const;

  friend bool operator==(const AncestorMask&, const AncestorMask&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Draft flattened for one verification pass. Positions are topologically
/// ordered: parents[i] < i for every non-root parent.
struct FlatDraft {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;
  /// Draft distribution each token was drafted from (at its parent's path).
  std::vector<TokenDistribution> draft_dists;
  std::vector<double> confidences;
  std::vector<double> values;
  std::vector<int> depths;
  /// 1-based rank by value among selected positions of the same depth.
  std::vector<int> layer_ranks;
  AncestorMask mask;
  Proposal proposal = Proposal::kDeterministic;

  std::size_t size() const noexcept { return tokens.size(); }

  /// children[0] lists top-level positions, children[i + 1] those of
  /// position i; each list in sibling trial order (value desc, index asc).
  std::vector<std::vector<std::int32_t>> children_by_value() const;

  /// Tokens of the path from the root to `pos`, inclusive, read off the mask.
  std::vector<TokenId> visible_tokens(std::size_t pos) const;
};

/// Assembles a FlatDraft and derives depths, ranks and mask. Throws
/// InvalidInput unless parents are topologically ordered. `draft_dists` may
/// be empty for deterministic drafts built outside a DraftTree.
FlatDraft make_flat_draft(std::vector<TokenId> tokens, std::vector<std::int32_t> parents,
                          std::vector<TokenDistribution> draft_dists,
                          std::vector<double> confidences, std::vector<double> values,
                          Proposal proposal = Proposal::kDeterministic);

/// Throws InvalidInput if the mask disagrees with the ancestor relation
/// implied by `parents`, or parents are not topologically ordered.
void check_flat_draft(const FlatDraft& draft);

/// Breadth-first flattening of the selected node indices. Throws
/// InvalidState if the selection is not closed under parents.
FlatDraft flatten_nodes(const DraftTree& tree, std::span<const std::int32_t> selected);

/// Global top-m by value, shallower first on ties, then lower node index.
FlatDraft rerank_and_flatten(const DraftTree& tree, std::size_t m);

/// Draft made of the nodes chosen during expansion (top-k per layer, ranked
/// by `key`) without global reranking; trimmed deepest-first to m.
FlatDraft flatten_expansion(const DraftTree& tree, int k, std::size_t m,
                            ExpansionKey key = ExpansionKey::kValue);

/// Fixed-shape tree: layer d holds up to shape[d] nodes, filled left to right
/// from the previous layer, at most `branch` children per parent. Every node
/// is kept; no reranking.
FlatDraft static_tree(const Context& ctx, const LanguageModel& draft, std::span<const int> shape,
                      int branch);

/// Even split of an m-token budget over `depth` layers (earlier layers take
/// the remainder).
std::vector<int> default_static_shape(int depth, std::size_t m);

/// Standard speculative-sampling chain: each token sampled from the draft.
FlatDraft sampled_chain(const Context& ctx, const LanguageModel& draft, int depth, Rng& rng);

}  // namespace dyntree
