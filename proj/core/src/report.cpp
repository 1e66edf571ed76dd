// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/report.hpp"

#include <cmath>
#include <fstream>

#include "dyntree/error.hpp"

namespace dyntree {

namespace {

const char* status_name(TrialStatus s) {
  switch (s) {
    case TrialStatus::kAccepted: return "accepted";
    case TrialStatus::kRejected: return "rejected";
    case TrialStatus::kNotReached: return "not_reached";
  }
  return "unknown";
}

// nlohmann writes non-finite doubles as null; keep that explicit.
nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const EngineConfig& cfg) {
  return {
      {"mode", to_string(cfg.mode)},
      {"depth", cfg.depth},
      {"k", cfg.k},
      {"branch", cfg.branch},
      {"m", cfg.m},
      {"temperature", cfg.temperature},
      {"max_tokens", cfg.max_tokens},
      {"seed", cfg.seed},
      {"static_shape", cfg.mode == Mode::kNoBoth ? cfg.effective_static_shape() : cfg.static_shape},
      {"accept_bias", cfg.accept_bias},
  };
}

EngineConfig engine_config_from_json(const nlohmann::json& doc) {
  EngineConfig cfg;
  try {
    if (doc.contains("mode")) cfg.mode = parse_mode(doc.at("mode").get<std::string>());
    cfg.depth = doc.value("depth", cfg.depth);
    cfg.k = doc.value("k", cfg.k);
    cfg.branch = doc.value("branch", cfg.branch);
    cfg.m = doc.value("m", cfg.m);
    cfg.temperature = doc.value("temperature", cfg.temperature);
    cfg.max_tokens = doc.value("max_tokens", cfg.max_tokens);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.static_shape = doc.value("static_shape", cfg.static_shape);
    cfg.accept_bias = doc.value("accept_bias", cfg.accept_bias);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad engine config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const FlatDraft& draft) {
  nlohmann::json mask = nlohmann::json::array();
  for (std::size_t i = 0; i < draft.size(); ++i) mask.push_back(draft.mask.row_bits(i));
  return {
      {"tokens", draft.tokens},
      {"parents", draft.parents},
      {"values", draft.values},
      {"mask", std::move(mask)},
  };
}

nlohmann::json to_json(const VerificationOutcome& outcome) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : outcome.trials) trials.push_back(status_name(t.status));
  return {
      {"accepted", outcome.accepted},
      {"accepted_positions", outcome.accepted_positions},
      {"bonus", outcome.bonus},
      {"trials", std::move(trials)},
  };
}

nlohmann::json to_json(const GenerationTrace& trace) {
  nlohmann::json cycles = nlohmann::json::array();
  for (std::size_t i = 0; i < trace.cycles.size(); ++i) {
    auto c = to_json(trace.cycles[i]);
    if (i < trace.drafts.size()) c["draft"] = to_json(trace.drafts[i]);
    cycles.push_back(std::move(c));
  }
  return {
      {"prompt", trace.prompt},
      {"emitted", trace.emitted},
      {"cycles", std::move(cycles)},
  };
}

nlohmann::json to_json(const CostModel& cost) {
  return {
      {"draft_step_cost", cost.draft_step_cost},
      {"target_step_cost", cost.target_step_cost},
      {"per_token_overhead", cost.per_token_overhead},
  };
}

nlohmann::json to_json(const PositionalAcceptance& positional) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [pos, s] : positional) {
    rows.push_back({
        {"depth", pos.depth},
        {"rank", pos.rank},
        {"accepted", s.accepted},
        {"rejected", s.rejected},
        {"not_reached", s.not_reached},
        {"acceptance_rate", s.acceptance_rate()},
    });
  }
  return rows;
}

nlohmann::json to_json(const std::vector<CalibrationBin>& bins) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& b : bins) {
    rows.push_back({
        {"bin_lo", b.lo},
        {"bin_hi", b.hi},
        {"mean_conf", b.mean_confidence ? nlohmann::json(*b.mean_confidence) : nlohmann::json(nullptr)},
        {"acc_rate", b.acceptance_rate ? nlohmann::json(*b.acceptance_rate) : nlohmann::json(nullptr)},
        {"count", b.count},
    });
  }
  return rows;
}

nlohmann::json to_json(const RunReport& report) {
  return {
      {"tau", report.tau},
      {"speedup_estimate", report.speedup_estimate},
      {"n_traces", report.n_traces},
      {"n_cycles", report.n_cycles},
      {"n_emitted", report.n_emitted},
      {"positional_acceptance", to_json(report.positional)},
      {"calibration", to_json(report.calibration)},
      {"cost_model", to_json(report.cost)},
      {"config", to_json(report.config)},
  };
}

nlohmann::json to_json(const EquivalenceVerdict& verdict) {
  return {
      {"statistic", number_or_null(verdict.statistic)},
      {"p_value", verdict.p_value},
      {"tv_distance", verdict.tv_distance},
      {"n_samples", verdict.n_samples},
      {"cells", verdict.cells},
      {"degrees_of_freedom", verdict.degrees_of_freedom},
      {"alpha", verdict.alpha},
      {"pass", verdict.pass},
  };
}

nlohmann::json to_json(const ReportDocument& doc) {
  return {
      {"schema_version", doc.schema_version},
      {"command", doc.command},
      {"config", doc.config},
      {"results", doc.results},
      {"rng_seed", doc.rng_seed},
  };
}

std::string dump_report(const ReportDocument& doc) { return to_json(doc).dump(2) + "\n"; }

void write_report(const ReportDocument& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << dump_report(doc);
  if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace dyntree
