// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t r = i; r <= j; ++r) ranks[order[r]] = rank;
    i = j + 1;
  }
  return ranks;
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void CostModel::validate() const {
  if (!(target_step_cost > 0.0) || !std::isfinite(target_step_cost)) {
    throw InvalidInput("target_step_cost must be positive");
  }
  if (!(draft_step_cost >= 0.0) || !std::isfinite(draft_step_cost)) {
    throw InvalidInput("draft_step_cost must be non-negative");
  }
  if (!(per_token_overhead >= 0.0) || !std::isfinite(per_token_overhead)) {
    throw InvalidInput("per_token_overhead must be non-negative");
  }
}

double PositionStats::acceptance_rate() const noexcept {
  const auto n = trials();
  return n == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(n);
}

double average_acceptance_length(std::span<const GenerationTrace> traces) {
  std::uint64_t cycles = 0;
  std::uint64_t tokens = 0;
  for (const auto& trace : traces) {
    for (const auto& c : trace.cycles) {
      ++cycles;
      tokens += c.cycle_length();
    }
  }
  if (cycles == 0) throw InvalidInput("average_acceptance_length needs at least one cycle");
  return static_cast<double>(tokens) / static_cast<double>(cycles);
}

double speedup_estimate(double tau, const EngineConfig& cfg, const CostModel& cost) {
  if (!(tau >= 1.0)) throw InvalidInput("tau must be >= 1");
  cost.validate();
  if (cfg.mode == Mode::kVanilla) return tau;
  const double layers = cfg.mode == Mode::kNoBoth
                            ? static_cast<double>(cfg.effective_static_shape().size())
                            : static_cast<double>(cfg.depth);
  const double cycle_cost =
      cost.target_step_cost + layers * cost.draft_step_cost + cost.per_token_overhead;
  return tau * cost.target_step_cost / cycle_cost;
}

PositionalAcceptance positional_acceptance(std::span<const GenerationTrace> traces) {
  PositionalAcceptance out;
  for (const auto& trace : traces) {
    for (const auto& cycle : trace.cycles) {
      for (const auto& trial : cycle.trials) {
        auto& stats = out[PositionClass{trial.depth, trial.layer_rank}];
        switch (trial.status) {
          case TrialStatus::kAccepted: ++stats.accepted; break;
          case TrialStatus::kRejected: ++stats.rejected; break;
          case TrialStatus::kNotReached: ++stats.not_reached; break;
        }
      }
    }
  }
  return out;
}

std::vector<CalibrationBin> calibration_bins(std::span<const GenerationTrace> traces, int n_bins) {
  if (n_bins < 2) throw InvalidInput("calibration needs at least 2 bins");
  const auto n = static_cast<std::size_t>(n_bins);
  std::vector<double> conf_sum(n, 0.0);
  std::vector<std::uint64_t> accepted(n, 0);
  std::vector<CalibrationBin> bins(n);
  for (std::size_t b = 0; b < n; ++b) {
    bins[b].lo = static_cast<double>(b) / static_cast<double>(n);
    bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(n);
  }
  for (const auto& trace : traces) {
    for (const auto& cycle : trace.cycles) {
      for (const auto& trial : cycle.trials) {
        if (trial.status == TrialStatus::kNotReached) continue;
        const auto b = std::min(n - 1, static_cast<std::size_t>(trial.confidence * static_cast<double>(n)));
        ++bins[b].count;
        conf_sum[b] += trial.confidence;
        if (trial.status == TrialStatus::kAccepted) ++accepted[b];
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (bins[b].count == 0) continue;
    const auto count = static_cast<double>(bins[b].count);
    bins[b].mean_confidence = conf_sum[b] / count;
    bins[b].acceptance_rate = static_cast<double>(accepted[b]) / count;
  }
  return bins;
}

RunReport summarize(std::span<const GenerationTrace> traces, const EngineConfig& cfg,
                    const CostModel& cost, int n_bins) {
  RunReport report;
  report.config = cfg;
  report.cost = cost;
  report.n_traces = traces.size();
  for (const auto& t : traces) {
    report.n_cycles += t.cycles.size();
    report.n_emitted += t.emitted.size();
  }
  report.tau = average_acceptance_length(traces);
  report.speedup_estimate = speedup_estimate(report.tau, cfg, cost);
  report.positional = positional_acceptance(traces);
  report.calibration = calibration_bins(traces, n_bins);
  return report;
}

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("spearman_correlation needs equal-length inputs");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  if (x.size() < 2) return kNaN;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("paired_t_test needs equal-length samples");
  PairedTestResult r;
  r.n = a.size();
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  r.mean_difference = mean(diff);
  if (r.n < 2) {
    r.p_value = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const double sd = std::sqrt(sample_variance(diff));
  if (sd == 0.0) {
    r.t_statistic = r.mean_difference > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    r.p_value = r.mean_difference > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t_statistic = r.mean_difference / (sd / std::sqrt(static_cast<double>(r.n)));
  const boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t_statistic));
  return r;
}

}  // namespace dyntree
