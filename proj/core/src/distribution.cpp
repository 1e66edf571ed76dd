// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

void check_entries(const std::vector<double>& probs) {
  if (probs.empty()) throw InvalidInput("distribution over an empty vocabulary");
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidInput("distribution entry is negative or not finite: " + std::to_string(p));
    }
  }
}

}  // namespace

TokenDistribution::TokenDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  check_entries(probs_);
  const double sum = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw InvalidInput("distribution sums to " + std::to_string(sum) + ", expected 1");
  }
}

TokenDistribution TokenDistribution::normalized(std::vector<double> weights) {
  check_entries(weights);
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(sum > 0.0)) throw InvalidInput("cannot normalize a zero weight vector");
  for (double& w : weights) w /= sum;
  return TokenDistribution(std::move(weights));
}

TokenDistribution TokenDistribution::uniform(std::size_t vocab_size) {
  return TokenDistribution(std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)));
}

TokenDistribution TokenDistribution::point_mass(std::size_t vocab_size, TokenId token) {
  if (token >= vocab_size) throw InvalidInput("point mass outside vocabulary");
  std::vector<double> probs(vocab_size, 0.0);
  probs[token] = 1.0;
  return TokenDistribution(std::move(probs));
}

TokenId TokenDistribution::argmax() const {
  // max_element returns the first maximum, i.e. the lowest TokenId on ties.
  return static_cast<TokenId>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

std::vector<TokenId> TokenDistribution::top_tokens(std::size_t n) const {
  std::vector<TokenId> ids;
  ids.reserve(probs_.size());
  for (TokenId t = 0; t < probs_.size(); ++t) {
    if (probs_[t] > 0.0) ids.push_back(t);
  }
  const auto by_prob = [this](TokenId a, TokenId b) {
    if (probs_[a] != probs_[b]) return probs_[a] > probs_[b];
    return a < b;
  };
  n = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(), by_prob);
  ids.resize(n);
  return ids;
}

TokenDistribution apply_temperature(const TokenDistribution& dist, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("temperature must be positive and finite");
  }
  if (temperature == 1.0) return dist;
  const auto probs = dist.probs();
  const double log_max = std::log(*std::max_element(probs.begin(), probs.end()));
  std::vector<double> weights(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) weights[i] = std::exp((std::log(probs[i]) - log_max) / temperature);
  }
  return TokenDistribution::normalized(std::move(weights));
}

double max_abs_difference(const TokenDistribution& a, const TokenDistribution& b) {
  if (a.size() != b.size()) throw InvalidInput("distribution sizes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.probs()[i] - b.probs()[i]));
  }
  return worst;
}

}  // namespace dyntree
