// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "dyntree/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "dyntree/error.hpp"
#include "dyntree/random.hpp"

namespace dyntree {

namespace {

constexpr double kFileSumTolerance = 1e-6;
constexpr std::size_t kMaxDenseRows = std::size_t{1} << 22;

// Number of windows V^order, or 0 if it overflows `limit`.
std::uint64_t window_count(std::size_t vocab_size, std::size_t order, std::uint64_t limit) {
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < order; ++i) {
    if (count > limit / vocab_size) return 0;
    count *= vocab_size;
  }
  return count;
}

Context parse_context_key(const std::string& key) {
  Context tokens;
  if (key.empty()) return tokens;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = key.find(',', start);
    const std::size_t end = comma == std::string::npos ? key.size() : comma;
    TokenId value = 0;
    const char* first = key.data() + start;
    const char* last = key.data() + end;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || first == last) {
      throw DataError("malformed context key \"" + key + "\"");
    }
    tokens.push_back(value);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return tokens;
}

TokenDistribution row_from_json(const nlohmann::json& arr, std::size_t vocab_size,
                                const std::string& what) {
  if (!arr.is_array()) throw DataError(what + " is not an array");
  if (arr.size() != vocab_size) {
    throw DataError(what + " has " + std::to_string(arr.size()) + " entries, expected " +
                    std::to_string(vocab_size));
  }
  std::vector<double> probs;
  probs.reserve(vocab_size);
  for (const auto& v : arr) {
    if (!v.is_number()) throw DataError(what + " contains a non-numeric entry");
    const double p = v.get<double>();
    if (!std::isfinite(p) || p < 0.0) throw DataError(what + " contains a negative entry");
    probs.push_back(p);
  }
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > kFileSumTolerance) {
    std::ostringstream msg;
    msg << what << " sums to " << sum << ", expected 1 +/- " << kFileSumTolerance;
    throw DataError(msg.str());
  }
  return TokenDistribution::normalized(std::move(probs));
}

std::size_t require_count(const nlohmann::json& doc, const char* field) {
  if (!doc.contains(field)) throw DataError(std::string("missing field \"") + field + "\"");
  const auto& v = doc.at(field);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw DataError(std::string("field \"") + field + "\" must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

// Dirichlet draw via Gamma(a + 1) * U^(1/a), kept in log space so that very
// small concentrations do not underflow to an all-zero row.
TokenDistribution dirichlet_row(std::size_t vocab_size, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration + 1.0, 1.0);
  std::vector<double> logs(vocab_size);
  for (auto& l : logs) {
    const double g = gamma(rng.engine());
    double u = rng.uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    l = std::log(g) + std::log(u) / concentration;
  }
  const double hi = *std::max_element(logs.begin(), logs.end());
  std::vector<double> weights(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) weights[i] = std::exp(logs[i] - hi);
  return TokenDistribution::normalized(std::move(weights));
}

}  // namespace

void check_in_vocabulary(std::span<const TokenId> tokens, std::size_t vocab_size) {
  for (TokenId t : tokens) {
    if (t >= vocab_size) {
      throw InvalidInput("token " + std::to_string(t) + " outside vocabulary of size " +
                         std::to_string(vocab_size));
    }
  }
}

std::string context_key(std::span<const TokenId> tokens) {
  std::string key;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) key += ',';
    key += std::to_string(tokens[i]);
  }
  return key;
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(std::size_t vocab_size, std::size_t order, TokenDistribution fallback,
                           std::map<Context, TokenDistribution> rows)
    : vocab_size_(vocab_size), order_(order), fallback_(std::move(fallback)), rows_(std::move(rows)) {
  if (vocab_size_ < 1) throw InvalidInput("vocab_size must be positive");
  if (window_count(vocab_size_, order_, std::numeric_limits<std::uint64_t>::max() / 2) == 0) {
    throw InvalidInput("vocab_size^order does not fit a 64-bit window key");
  }
  if (fallback_.size() != vocab_size_) throw InvalidInput("fallback row has the wrong size");
  index_.reserve(rows_.size());
  for (const auto& [window, dist] : rows_) {
    if (window.size() != order_) {
      throw InvalidInput("row \"" + context_key(window) + "\" does not have order " +
                         std::to_string(order_));
    }
    check_in_vocabulary(window, vocab_size_);
    if (dist.size() != vocab_size_) {
      throw InvalidInput("row \"" + context_key(window) + "\" has the wrong size");
    }
    index_.emplace(window_key(window), dist);
  }
}

std::uint64_t TabularModel::window_key(std::span<const TokenId> window) const noexcept {
  std::uint64_t key = 0;
  for (TokenId t : window) key = key * vocab_size_ + t;
  return key;
}

const TokenDistribution& TabularModel::row_for(std::span<const TokenId> ctx) const {
  check_in_vocabulary(ctx, vocab_size_);
  if (ctx.size() < order_) return fallback_;
  const auto it = index_.find(window_key(ctx.last(order_)));
  return it == index_.end() ? fallback_ : it->second;
}

TokenDistribution TabularModel::next_distribution(std::span<const TokenId> ctx) const {
  return row_for(ctx);
}

// ---------------------------------------------------------------------------
// Distortion

Distortion Distortion::temperature(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidInput("temperature distortion needs gamma > 0");
  return {Kind::kTemperature, gamma};
}

Distortion Distortion::mix(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("mix distortion needs lambda in [0, 1]");
  return {Kind::kMix, lambda};
}

Distortion Distortion::swap_mass(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) throw InvalidInput("swap distortion needs epsilon in [0, 0.5]");
  return {Kind::kSwapMass, epsilon};
}

Distortion Distortion::parse(const std::string& text) {
  if (text == "none") return none();
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw InvalidInput("bad distortion \"" + text + "\"");
  const std::string name = text.substr(0, colon);
  const std::string arg = text.substr(colon + 1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), value);
  if (ec != std::errc{} || ptr != arg.data() + arg.size() || arg.empty()) {
    throw InvalidInput("bad distortion parameter in \"" + text + "\"");
  }
  if (name == "temperature") return temperature(value);
  if (name == "mix") return mix(value);
  if (name == "swap" || name == "swap_mass") return swap_mass(value);
  throw InvalidInput("unknown distortion \"" + name + "\"");
}

std::string Distortion::to_string() const {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, param);
  const std::string value(buf, res.ptr);
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kTemperature: return "temperature:" + value;
    case Kind::kMix: return "mix:" + value;
    case Kind::kSwapMass: return "swap:" + value;
  }
  return "none";
}

TokenDistribution Distortion::apply(const TokenDistribution& dist) const {
  switch (kind) {
    case Kind::kNone:
      return dist;
    case Kind::kTemperature:
      return apply_temperature(dist, param);
    case Kind::kMix: {
      const double uniform = 1.0 / static_cast<double>(dist.size());
      std::vector<double> probs(dist.probs().begin(), dist.probs().end());
      for (double& p : probs) p = (1.0 - param) * p + param * uniform;
      return TokenDistribution::normalized(std::move(probs));
    }
    case Kind::kSwapMass: {
      if (dist.size() < 2) return dist;
      std::vector<TokenId> order(dist.size());
      std::iota(order.begin(), order.end(), TokenId{0});
      std::partial_sort(order.begin(), order.begin() + 2, order.end(), [&](TokenId a, TokenId b) {
        return dist[a] != dist[b] ? dist[a] > dist[b] : a < b;
      });
      std::vector<double> probs(dist.probs().begin(), dist.probs().end());
      const double moved = std::min(param, probs[order[0]]);
      probs[order[0]] -= moved;
      probs[order[1]] += moved;
      return TokenDistribution::normalized(std::move(probs));
    }
  }
  return dist;
}

// ---------------------------------------------------------------------------
// Adapters

DerivedDraftModel::DerivedDraftModel(const LanguageModel& base, Distortion distortion)
    : base_(base), distortion_(distortion) {}

TokenDistribution DerivedDraftModel::next_distribution(std::span<const TokenId> ctx) const {
  return distortion_.apply(base_.next_distribution(ctx));
}

TemperedModel::TemperedModel(const LanguageModel& base, double temperature)
    : base_(base), temperature_(temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("TemperedModel needs temperature > 0");
}

TokenDistribution TemperedModel::next_distribution(std::span<const TokenId> ctx) const {
  return apply_temperature(base_.next_distribution(ctx), temperature_);
}

// ---------------------------------------------------------------------------
// Files

TabularModel model_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw DataError("model document must be an object");
  const std::size_t vocab = require_count(doc, "vocab_size");
  const std::size_t order = require_count(doc, "order");
  if (vocab < 1) throw DataError("vocab_size must be positive");
  if (!doc.contains("fallback")) throw DataError("missing field \"fallback\"");
  TokenDistribution fallback = row_from_json(doc.at("fallback"), vocab, "fallback row");

  std::map<Context, TokenDistribution> rows;
  if (doc.contains("rows")) {
    const auto& rows_json = doc.at("rows");
    if (!rows_json.is_object()) throw DataError("field \"rows\" must be an object");
    for (const auto& [key, value] : rows_json.items()) {
      const std::string what = "row \"" + key + "\"";
      Context window = parse_context_key(key);
      if (window.size() != order) {
        throw DataError(what + " has " + std::to_string(window.size()) + " tokens, expected " +
                        std::to_string(order));
      }
      for (TokenId t : window) {
        if (t >= vocab) throw DataError(what + " names a token outside the vocabulary");
      }
      rows.insert_or_assign(std::move(window), row_from_json(value, vocab, what));
    }
  }
  return TabularModel(vocab, order, std::move(fallback), std::move(rows));
}

nlohmann::json model_to_json(const TabularModel& model) {
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [window, dist] : model.rows()) {
    rows[context_key(window)] = std::vector<double>(dist.probs().begin(), dist.probs().end());
  }
  const auto fb = model.fallback().probs();
  return {
      {"vocab_size", model.vocab_size()},
      {"order", model.order()},
      {"fallback", std::vector<double>(fb.begin(), fb.end())},
      {"rows", std::move(rows)},
  };
}

TabularModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open model file");
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_model(const TabularModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write model file");
  out << model_to_json(model).dump(1) << '\n';
}

TabularModel random_model(std::size_t vocab_size, std::size_t order, std::uint64_t seed,
                          double concentration) {
  if (vocab_size < 2) throw InvalidInput("random_model needs vocab_size >= 2");
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw InvalidInput("random_model needs a positive concentration");
  }
  const std::uint64_t windows = window_count(vocab_size, order, kMaxDenseRows);
  if (windows == 0) throw InvalidInput("random_model table would exceed 2^22 rows");

  Rng rng(seed);
  TokenDistribution fallback = dirichlet_row(vocab_size, concentration, rng);
  std::map<Context, TokenDistribution> rows;
  Context window(order, 0);
  for (std::uint64_t w = 0; w < windows; ++w) {
    std::uint64_t rest = w;
    for (std::size_t i = order; i-- > 0;) {
      window[i] = static_cast<TokenId>(rest % vocab_size);
      rest /= vocab_size;
    }
    rows.emplace_hint(rows.end(), window, dirichlet_row(vocab_size, concentration, rng));
  }
  return TabularModel(vocab_size, order, std::move(fallback), std::move(rows));
}

}  // namespace dyntree
