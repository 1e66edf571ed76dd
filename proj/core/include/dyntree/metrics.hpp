// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dyntree/engine.hpp"

namespace dyntree {

/// Parametric stand-in for wall-clock cost. Costs are relative to one
/// target forward.
struct CostModel {
  double draft_step_cost = 0.05;
  double target_step_cost = 1.0;
  double per_token_overhead = 0.0;

  void validate() const;
};

/// Draft-tree position class: depth and value rank within that depth.
struct PositionClass {
  int depth = 0;
  int rank = 0;

  friend auto operator<=>(const PositionClass&, const PositionClass&) = default;
};

struct PositionStats {
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  /// Drafted but never tested in that cycle.
  std::uint64_t not_reached = 0;

  std::uint64_t trials() const noexcept { return accepted + rejected + not_reached; }
  std::uint64_t tested() const noexcept { return accepted + rejected; }
  /// accepted / trials; positions never reached count as non-acceptance.
  double acceptance_rate() const noexcept;
};

using PositionalAcceptance = std::map<PositionClass, PositionStats>;

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  /// Mean confidence of the tested tokens in the bin; nullopt when empty.
  std::optional<double> mean_confidence;
  /// Fraction of tested tokens accepted; nullopt when empty.
  std::optional<double> acceptance_rate;
  std::uint64_t count = 0;
};

struct RunReport {
  double tau = 0.0;
  double speedup_estimate = 0.0;
  std::uint64_t n_traces = 0;
  std::uint64_t n_cycles = 0;
  std::uint64_t n_emitted = 0;
  PositionalAcceptance positional;
  std::vector<CalibrationBin> calibration;
  EngineConfig config;
  CostModel cost;
};

/// Mean cycle length (accepted tokens + bonus). Throws InvalidInput when
/// there are no cycles.
double average_acceptance_length(std::span<const GenerationTrace> traces);

/// tau * target / (target + layers * draft + overhead), where `layers` is the
/// number of draft forwards per cycle. Vanilla decoding costs exactly one
/// target step per token, so its estimate is tau.
double speedup_estimate(double tau, const EngineConfig& cfg, const CostModel& cost);

PositionalAcceptance positional_acceptance(std::span<const GenerationTrace> traces);

/// Equal-width confidence bins over [0, 1]; a confidence of exactly 1 falls
/// in the last bin. Only tokens whose acceptance was tested are counted.
std::vector<CalibrationBin> calibration_bins(std::span<const GenerationTrace> traces, int n_bins);

RunReport summarize(std::span<const GenerationTrace> traces, const EngineConfig& cfg,
                    const CostModel& cost, int n_bins);

/// Spearman rank correlation with average ranks for ties. NaN if either
/// input is constant or shorter than 2.
double spearman_correlation(std::span<const double> x, std::span<const double> y);

struct PairedTestResult {
  std::size_t n = 0;
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  /// One-sided p-value for H1: mean(a - b) > 0.
  double p_value = 1.0;
};

/// Paired Student t test over matched samples.
PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Unbiased sample variance; 0 for fewer than 2 values.
double sample_variance(std::span<const double> values);

}  // namespace dyntree
