// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dyntree/draft_tree.hpp"
#include "dyntree/engine.hpp"
#include "dyntree/metrics.hpp"
#include "dyntree/oracle.hpp"

namespace dyntree {

inline constexpr const char* kReportSchemaVersion = "1.0";

nlohmann::json to_json(const EngineConfig& cfg);
/// Inverse of to_json(EngineConfig); missing fields keep their defaults.
EngineConfig engine_config_from_json(const nlohmann::json& doc);

/// tokens, parents, values and the ancestor mask as '0'/'1' row strings.
nlohmann::json to_json(const FlatDraft& draft);
nlohmann::json to_json(const VerificationOutcome& outcome);
nlohmann::json to_json(const GenerationTrace& trace);
nlohmann::json to_json(const CostModel& cost);
nlohmann::json to_json(const PositionalAcceptance& positional);
/// Empty bins carry null for mean_conf and acc_rate.
nlohmann::json to_json(const std::vector<CalibrationBin>& bins);
nlohmann::json to_json(const RunReport& report);
nlohmann::json to_json(const EquivalenceVerdict& verdict);

/// Top-level document written by every CLI command.
struct ReportDocument {
  std::string schema_version = kReportSchemaVersion;
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json results = nlohmann::json::object();
  std::uint64_t rng_seed = 0;
};

nlohmann::json to_json(const ReportDocument& doc);

/// Pretty-printed with sorted keys, so equal documents are byte-identical.
std::string dump_report(const ReportDocument& doc);
/// Throws DataError if the file cannot be written.
void write_report(const ReportDocument& doc, const std::filesystem::path& path);

}  // namespace dyntree
