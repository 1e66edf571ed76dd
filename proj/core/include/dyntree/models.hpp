// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyntree/distribution.hpp"

namespace dyntree {

/// Next-token interface shared by target and draft models.
///
/// Implementations are immutable after construction and safe to query from
/// several threads at once.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const noexcept = 0;

  /// Distribution of the token following `ctx`. Throws InvalidInput if a
  /// context token is outside the vocabulary.
  virtual TokenDistribution next_distribution(std::span<const TokenId> ctx) const = 0;
};

/// Order-N Markov model stored as an explicit table.
///
/// A row is keyed by the last `order` tokens of the context. Windows with no
/// row, and contexts shorter than `order`, are answered by the fallback row.
class TabularModel final : public LanguageModel {
 public:
  TabularModel(std::size_t vocab_size, std::size_t order, TokenDistribution fallback,
               std::map<Context, TokenDistribution> rows);

  std::size_t vocab_size() const noexcept override { return vocab_size_; }
  std::size_t order() const noexcept { return order_; }
  const TokenDistribution& fallback() const noexcept { return fallback_; }
  const std::map<Context, TokenDistribution>& rows() const noexcept { return rows_; }

  TokenDistribution next_distribution(std::span<const TokenId> ctx) const override;

  /// Same lookup without the copy.
  const TokenDistribution& row_for(std::span<const TokenId> ctx) const;

 private:
  std::uint64_t window_key(std::span<const TokenId> window) const noexcept;

  std::size_t vocab_size_;
  std::size_t order_;
  TokenDistribution fallback_;
  std::map<Context, TokenDistribution> rows_;
  std::unordered_map<std::uint64_t, TokenDistribution> index_;
};

/// Controlled imperfection applied to a base model's distributions.
struct Distortion {
  enum class Kind { kNone, kTemperature, kMix, kSwapMass };

  Kind kind = Kind::kNone;
  double param = 0.0;

  static Distortion none() { return {}; }
  static Distortion temperature(double gamma);
  static Distortion mix(double lambda);
  static Distortion swap_mass(double epsilon);

  /// Accepts "none", "temperature:G", "mix:L", "swap:E" (also "swap_mass:E").
  static Distortion parse(const std::string& text);
  std::string to_string() const;

  TokenDistribution apply(const TokenDistribution& dist) const;

  friend bool operator==(const Distortion&, const Distortion&) = default;
};

/// Draft model obtained by distorting a base model. Holds a non-owning
/// reference; the base must outlive it.
class DerivedDraftModel final : public LanguageModel {
 public:
  DerivedDraftModel(const LanguageModel& base, Distortion distortion);

  std::size_t vocab_size() const noexcept override { return base_.vocab_size(); }
  TokenDistribution next_distribution(std::span<const TokenId> ctx) const override;

  const Distortion& distortion() const noexcept { return distortion_; }

 private:
  const LanguageModel& base_;
  Distortion distortion_;
};

/// Sampling-temperature view of another model (non-owning).
class TemperedModel final : public LanguageModel {
 public:
  TemperedModel(const LanguageModel& base, double temperature);

  std::size_t vocab_size() const noexcept override { return base_.vocab_size(); }
  TokenDistribution next_distribution(std::span<const TokenId> ctx) const override;

 private:
  const LanguageModel& base_;
  double temperature_;
};

/// Throws InvalidInput if any token is >= vocab_size.
void check_in_vocabulary(std::span<const TokenId> tokens, std::size_t vocab_size);

/// Model file codec. Field names: vocab_size, order, fallback, rows; row
/// keys are comma-joined decimal tokens ("" for order 0).
TabularModel model_from_json(const nlohmann::json& doc);
nlohmann::json model_to_json(const TabularModel& model);

/// Reads and validates a model file. Failures raise DataError naming the
/// file and, for bad rows, the offending context key.
TabularModel load_model(const std::filesystem::path& path);
void save_model(const TabularModel& model, const std::filesystem::path& path);

/// Dense random model: one row per window plus a fallback, each drawn from a
/// symmetric Dirichlet(concentration). Deterministic in all arguments.
TabularModel random_model(std::size_t vocab_size, std::size_t order, std::uint64_t seed,
                          double concentration);

std::string context_key(std::span<const TokenId> tokens);

}  // namespace dyntree
