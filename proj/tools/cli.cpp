// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dyntree/engine.hpp"
#include "dyntree/error.hpp"
#include "dyntree/metrics.hpp"
#include "dyntree/models.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/random.hpp"
#include "dyntree/report.hpp"

namespace dyntree::cli {

namespace {

using nlohmann::json;

// Prompts and per-prompt generation draw from separate seed streams.
constexpr std::uint64_t kPromptStream = 0x70726f6d707473ULL;

// Small-draft suite run by certify: every tree up to this many nodes.
constexpr std::size_t kSuiteMaxNodes = 5;

struct Options {
  std::string target;
  std::string draft;
  std::string distortion = "none";
  std::vector<std::string> modes{"eagle2"};
  int depth = 6;
  int k = 10;
  int branch = 10;
  std::size_t m = 60;
  double temperature = 1.0;
  std::size_t max_tokens = 64;
  std::uint64_t seed = 0;
  std::string prompts;
  std::size_t n_prompts = 1;
  std::size_t prompt_length = 4;
  std::string report;
  bool dump_tree = false;
  int bins = 20;
  double alpha = 0.01;
  std::uint64_t n_samples = 200'000;
  double draft_cost = 0.05;
  double overhead = 0.0;
  bool inject_bias = false;
  std::string shape;
  std::string csv;
};

// Target plus the draft derived from it (or loaded). Pinned in place:
// the derived draft refers to the loaded models.
class ModelPair {
 public:
  explicit ModelPair(const Options& o)
      : target_(load_model(o.target)), distortion_(Distortion::parse(o.distortion)) {
    if (!o.draft.empty()) draft_file_.emplace(load_model(o.draft));
    const LanguageModel& base = draft_file_ ? static_cast<const LanguageModel&>(*draft_file_) : target_;
    derived_ = std::make_unique<DerivedDraftModel>(base, distortion_);
  }
  ModelPair(const ModelPair&) = delete;
  ModelPair& operator=(const ModelPair&) = delete;

  const TabularModel& target() const { return target_; }
  const LanguageModel& draft() const { return *derived_; }

 private:
  TabularModel target_;
  Distortion distortion_;
  std::optional<TabularModel> draft_file_;
  std::unique_ptr<DerivedDraftModel> derived_;
};

std::vector<int> parse_shape(const std::string& text) {
  std::vector<int> shape;
  if (text.empty()) return shape;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int w = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      shape.push_back(w);
    } catch (const std::exception&) {
      throw InvalidInput("--shape expects comma-separated integers, got \"" + text + "\"");
    }
  }
  return shape;
}

EngineConfig engine_config(const Options& o, Mode mode) {
  EngineConfig cfg;
  cfg.mode = mode;
  cfg.depth = o.depth;
  cfg.k = o.k;
  cfg.branch = o.branch;
  cfg.m = o.m;
  cfg.temperature = o.temperature;
  cfg.max_tokens = o.max_tokens;
  cfg.seed = o.seed;
  cfg.static_shape = parse_shape(o.shape);
  cfg.accept_bias = o.inject_bias ? 0.05 : 0.0;
  cfg.keep_drafts = o.dump_tree;
  cfg.validate();
  return cfg;
}

CostModel cost_model(const Options& o) {
  CostModel cost;
  cost.draft_step_cost = o.draft_cost;
  cost.per_token_overhead = o.overhead;
  cost.validate();
  return cost;
}

std::vector<Context> read_prompt_file(const std::string& path, std::size_t vocab) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open prompt file");
  std::vector<Context> prompts;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::istringstream ls(line);
    Context prompt;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      unsigned long value = 0;
      try {
        value = std::stoul(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || tok.front() == '-') {
        throw DataError(path + ":" + std::to_string(lineno) + ": \"" + tok + "\" is not a token id");
      }
      if (value >= vocab) {
        throw DataError(path + ":" + std::to_string(lineno) + ": token " + tok +
                        " outside vocabulary of size " + std::to_string(vocab));
      }
      prompt.push_back(static_cast<TokenId>(value));
    }
    if (!ls.eof() && ls.fail()) throw DataError(path + ":" + std::to_string(lineno) + ": unreadable line");
    if (!prompt.empty()) prompts.push_back(std::move(prompt));
  }
  if (prompts.empty()) throw DataError(path + ": no prompts");
  return prompts;
}

std::vector<Context> resolve_prompts(const Options& o, const LanguageModel& target) {
  if (!o.prompts.empty()) return read_prompt_file(o.prompts, target.vocab_size());
  if (o.n_prompts == 0) throw InvalidInput("--n-prompts must be positive");
  std::vector<Context> prompts;
  prompts.reserve(o.n_prompts);
  const std::uint64_t base = derive_seed(o.seed, kPromptStream);
  for (std::size_t i = 0; i < o.n_prompts; ++i) {
    prompts.push_back(synthesize_prompt(target, o.prompt_length, derive_seed(base, i)));
  }
  return prompts;
}

std::vector<GenerationTrace> run_prompts(const ModelPair& models, const EngineConfig& cfg,
                                         const std::vector<Context>& prompts) {
  const SpeculativeEngine engine(models.target(), models.draft(), cfg);
  std::vector<GenerationTrace> traces;
  traces.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    traces.push_back(engine.generate(prompts[i], derive_seed(cfg.seed, i)));
  }
  return traces;
}

std::vector<double> per_prompt_tau(const std::vector<GenerationTrace>& traces) {
  std::vector<double> taus;
  taus.reserve(traces.size());
  for (const auto& t : traces) taus.push_back(average_acceptance_length(std::span(&t, 1)));
  return taus;
}

json echo(const Options& o, const EngineConfig& cfg, const std::vector<Context>& prompts) {
  json c = to_json(cfg);
  c["target"] = o.target;
  c["draft"] = o.draft.empty() ? json(nullptr) : json(o.draft);
  c["distortion"] = Distortion::parse(o.distortion).to_string();
  c["prompts"] = prompts;
  c["n_prompts"] = prompts.size();
  c["inject_bias"] = o.inject_bias;
  return c;
}

void emit_report(const Options& o, const ReportDocument& doc) {
  if (!o.report.empty()) write_report(doc, o.report);
}

// Shortest round-trip text for a double.
std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, res.ptr};
}

Mode single_mode(const Options& o) {
  if (o.modes.size() != 1) throw InvalidInput("this command takes exactly one --mode");
  return parse_mode(o.modes.front());
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const Options& o, std::ostream& out) {
  const ModelPair models(o);
  const EngineConfig cfg = engine_config(o, single_mode(o));
  const auto prompts = resolve_prompts(o, models.target());
  const GenerationTrace trace =
      SpeculativeEngine(models.target(), models.draft(), cfg).generate(prompts.front(), o.seed);

  for (std::size_t i = 0; i < trace.emitted.size(); ++i) out << (i ? " " : "") << trace.emitted[i];
  out << "\n";

  ReportDocument doc;
  doc.command = "generate";
  doc.config = echo(o, cfg, {prompts.front()});
  doc.rng_seed = o.seed;
  doc.results = to_json(trace);
  doc.results["tau"] = average_acceptance_length(std::span(&trace, 1));
  emit_report(o, doc);
  return kSuccess;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const ModelPair models(o);
  const auto prompts = resolve_prompts(o, models.target());
  const CostModel cost = cost_model(o);
  if (o.modes.empty()) throw InvalidInput("bench needs at least one --mode");

  ReportDocument doc;
  doc.command = "bench";
  doc.rng_seed = o.seed;
  doc.config = echo(o, engine_config(o, parse_mode(o.modes.front())), prompts);
  doc.config["modes"] = o.modes;
  doc.config.erase("mode");
  doc.config["cost_model"] = to_json(cost);
  json per_mode = json::object();
  for (const auto& name : o.modes) {
    const EngineConfig cfg = engine_config(o, parse_mode(name));
    const auto traces = run_prompts(models, cfg, prompts);
    const RunReport report = summarize(traces, cfg, cost, o.bins);
    json r = to_json(report);
    r.erase("calibration");
    r["per_prompt_tau"] = per_prompt_tau(traces);
    per_mode[name] = std::move(r);
    out << name << " tau=" << report.tau << " speedup_estimate=" << report.speedup_estimate << "\n";
  }
  doc.results = {{"modes", std::move(per_mode)}, {"n_prompts", prompts.size()}};
  emit_report(o, doc);
  return kSuccess;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const ModelPair models(o);
  const auto prompts = resolve_prompts(o, models.target());
  const CostModel cost = cost_model(o);
  const std::vector<Mode> arms{Mode::kEagle2, Mode::kNoValue, Mode::kNoRerank, Mode::kNoBoth};

  std::map<Mode, std::vector<double>> taus;
  json table = json::object();
  for (Mode mode : arms) {
    const EngineConfig cfg = engine_config(o, mode);
    const auto traces = run_prompts(models, cfg, prompts);
    taus[mode] = per_prompt_tau(traces);
    const double tau = average_acceptance_length(traces);
    table[to_string(mode)] = {
        {"tau", tau},
        {"speedup_estimate", speedup_estimate(tau, cfg, cost)},
        {"per_prompt_tau", taus[mode]},
    };
    out << to_string(mode) << " tau=" << tau << "\n";
  }

  // The four orderings of the ablation: full method above each single
  // ablation, each single ablation above removing both.
  const std::vector<std::pair<Mode, Mode>> gaps{{Mode::kEagle2, Mode::kNoRerank},
                                                {Mode::kNoRerank, Mode::kNoBoth},
                                                {Mode::kEagle2, Mode::kNoValue},
                                                {Mode::kNoValue, Mode::kNoBoth}};
  json comparisons = json::array();
  for (const auto& [hi, lo] : gaps) {
    const auto t = paired_t_test(taus[hi], taus[lo]);
    comparisons.push_back({
        {"higher", to_string(hi)},
        {"lower", to_string(lo)},
        {"mean_difference", t.mean_difference},
        {"t_statistic", std::isfinite(t.t_statistic) ? json(t.t_statistic) : json(nullptr)},
        {"p_value", std::isfinite(t.p_value) ? json(t.p_value) : json(nullptr)},
    });
  }

  ReportDocument doc;
  doc.command = "ablate";
  doc.rng_seed = o.seed;
  doc.config = echo(o, engine_config(o, Mode::kEagle2), prompts);
  doc.config.erase("mode");
  doc.config["arms"] = {"eagle2", "no_value", "no_rerank", "no_both"};
  doc.config["cost_model"] = to_json(cost);
  doc.results = {
      {"arms", std::move(table)},
      {"comparisons", std::move(comparisons)},
      {"n_prompts", prompts.size()},
      {"single_prompt", prompts.size() == 1},
  };
  emit_report(o, doc);
  return kSuccess;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const ModelPair models(o);
  const auto prompts = resolve_prompts(o, models.target());
  const EngineConfig cfg = engine_config(o, single_mode(o));
  const CostModel cost = cost_model(o);
  const auto traces = run_prompts(models, cfg, prompts);
  const RunReport report = summarize(traces, cfg, cost, o.bins);

  std::vector<double> idx, rate;
  std::uint64_t tested = 0;
  for (std::size_t b = 0; b < report.calibration.size(); ++b) {
    const auto& bin = report.calibration[b];
    tested += bin.count;
    if (!bin.acceptance_rate) continue;
    idx.push_back(static_cast<double>(b));
    rate.push_back(*bin.acceptance_rate);
  }
  const double rho = idx.size() >= 2 ? spearman_correlation(idx, rate) : std::nan("");

  if (!o.csv.empty()) {
    std::ofstream csv(o.csv);
    if (!csv) throw DataError(o.csv + ": cannot open for writing");
    csv << "bin_lo,bin_hi,mean_conf,acc_rate,count\n";
    for (const auto& bin : report.calibration) {
      csv << format_double(bin.lo) << "," << format_double(bin.hi) << ",";
      if (bin.mean_confidence) csv << format_double(*bin.mean_confidence);
      csv << ",";
      if (bin.acceptance_rate) csv << format_double(*bin.acceptance_rate);
      csv << "," << bin.count << "\n";
    }
    if (!csv) throw DataError(o.csv + ": write failed");
  }

  ReportDocument doc;
  doc.command = "calibrate";
  doc.rng_seed = o.seed;
  doc.config = echo(o, cfg, prompts);
  doc.config["bins"] = o.bins;
  doc.results = {
      {"calibration", to_json(report.calibration)},
      {"positional_acceptance", to_json(report.positional)},
      {"tested_tokens", tested},
      {"spearman_bin_vs_rate", std::isfinite(rho) ? json(rho) : json(nullptr)},
      {"tau", report.tau},
  };
  out << "tested_tokens=" << tested << " spearman=" << rho << "\n";
  emit_report(o, doc);
  return kSuccess;
}

// Exhaustive small-draft suite: every tree up to kSuiteMaxNodes nodes, with
// the target's masked distributions at `prompt`. Returns the largest
// deviation of an emitted-token law from the target law at its node.
std::pair<std::uint64_t, double> small_draft_suite(const LanguageModel& target, const Context& prompt) {
  double worst = 0.0;
  const auto shapes = for_each_draft_shape(kSuiteMaxNodes, target.vocab_size(), [&](const FlatDraft& d) {
    const MaskedTargets targets = compute_masked_target_dists(target, prompt, d);
    const VerificationLaw law = exact_tree_verification_marginal(targets, d);
    for (std::size_t i = 0; i < law.next_token.size(); ++i) {
      if (!law.next_token[i]) continue;
      const auto& p = targets.after(static_cast<std::int32_t>(i) - 1);
      worst = std::max(worst, max_abs_difference(*law.next_token[i], p));
    }
  });
  return {shapes, worst};
}

int cmd_certify(const Options& o, std::ostream& out) {
  const ModelPair models(o);
  const auto prompts = resolve_prompts(o, models.target());
  const EngineConfig cfg = engine_config(o, single_mode(o));
  const std::size_t horizon = cfg.max_tokens;

  ReportDocument doc;
  doc.command = "certify";
  doc.rng_seed = o.seed;
  doc.config = echo(o, cfg, prompts);
  doc.config["alpha"] = o.alpha;
  doc.config["n_samples"] = o.n_samples;

  bool pass = true;
  if (cfg.temperature == 0.0) {
    std::size_t mismatches = 0;
    const SpeculativeEngine engine(models.target(), models.draft(), cfg);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto trace = engine.generate(prompts[i], derive_seed(o.seed, i));
      if (trace.emitted != greedy_decode(models.target(), prompts[i], horizon)) ++mismatches;
    }
    pass = mismatches == 0;
    doc.results = {
        {"kind", "exact"},
        {"exact_pass", pass},
        {"mismatches", mismatches},
        {"n_prompts", prompts.size()},
        {"pass", pass},
    };
    out << (pass ? "exact-pass" : "exact-fail") << " mismatches=" << mismatches << "\n";
  } else {
    if (o.n_samples == 0) throw InvalidInput("--n-samples must be positive");
    const Context& prompt = prompts.front();
    std::optional<TemperedModel> tempered;
    if (cfg.temperature != 1.0) tempered.emplace(models.target(), cfg.temperature);
    const LanguageModel& sampling_target =
        tempered ? static_cast<const LanguageModel&>(*tempered) : models.target();
    const ExactSequenceDistribution expected = exact_autoregressive(sampling_target, prompt, horizon);
    const ExactSequenceDistribution engine_law =
        exact_generation_law(models.target(), models.draft(), prompt, horizon, cfg);
    const double law_deviation = max_abs_difference(engine_law, expected);

    SpeculativeEngine engine(models.target(), models.draft(), cfg);
    engine.enable_draft_cache(true);
    std::map<Context, std::uint64_t> counts;
    for (std::uint64_t i = 0; i < o.n_samples; ++i) {
      ++counts[engine.generate(prompt, derive_seed(o.seed, i)).emitted];
    }
    const EquivalenceVerdict verdict = chi_square_equivalence(counts, expected, o.alpha);

    json suite = {{"max_nodes", kSuiteMaxNodes}};
    bool suite_pass = true;
    if (models.target().vocab_size() <= OracleLimits{}.max_vocab) {
      const auto [shapes, worst] = small_draft_suite(sampling_target, prompt);
      suite_pass = worst < 1e-9;
      suite["shapes"] = shapes;
      suite["max_deviation"] = worst;
      suite["pass"] = suite_pass;
    } else {
      suite["skipped"] = "vocabulary exceeds the oracle limit";
    }

    pass = verdict.pass && suite_pass && law_deviation < 1e-9;
    doc.results = {
        {"kind", "chi_square"},
        {"verdict", to_json(verdict)},
        {"exact_engine_law_max_deviation", law_deviation},
        {"small_draft_suite", std::move(suite)},
        {"horizon", horizon},
        {"pass", pass},
    };
    out << (pass ? "pass" : "fail") << " p_value=" << verdict.p_value << " tv=" << verdict.tv_distance
        << " n=" << verdict.n_samples << "\n";
  }
  emit_report(o, doc);
  return pass ? kSuccess : kCertificationFailed;
}

struct MakeModelOptions {
  std::size_t vocab = 4;
  std::size_t order = 1;
  std::uint64_t seed = 0;
  double concentration = 1.0;
  std::string out;
};

int cmd_make_model(const MakeModelOptions& o) {
  save_model(random_model(o.vocab, o.order, o.seed, o.concentration), o.out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// Flag wiring

void add_model_flags(CLI::App* sub, Options& o) {
  sub->add_option("--target", o.target, "Target model file")->required();
  sub->add_option("--draft", o.draft, "Draft model file (default: the target)");
  sub->add_option("--distortion", o.distortion, "none | temperature:G | mix:L | swap:E")->capture_default_str();
  sub->add_option("--seed", o.seed, "Base RNG seed")->capture_default_str();
  sub->add_option("--prompts", o.prompts, "Prompt file: one space-separated prompt per line");
  sub->add_option("--n-prompts", o.n_prompts, "Number of synthesized prompts")->capture_default_str();
  sub->add_option("--prompt-length", o.prompt_length, "Length of synthesized prompts")->capture_default_str();
  sub->add_option("--report", o.report, "Write the JSON report here");
}

void add_engine_flags(CLI::App* sub, Options& o, bool many_modes) {
  auto* mode = sub->add_option("--mode", o.modes,
                               many_modes ? "Comma-separated modes" : "eagle2 | no_value | no_rerank | "
                                                                      "no_both | chain_sps | vanilla");
  mode->capture_default_str();
  if (many_modes) {
    mode->delimiter(',');
  } else {
    mode->expected(1);
  }
  sub->add_option("--depth", o.depth, "Draft tree depth")->capture_default_str();
  sub->add_option("--k", o.k, "Nodes expanded per layer")->capture_default_str();
  sub->add_option("--branch", o.branch, "Children per expanded node")->capture_default_str();
  sub->add_option("--m", o.m, "Draft tokens kept after reranking")->capture_default_str();
  sub->add_option("--shape", o.shape, "Static tree layer widths for no_both, e.g. 10,10,10,10,10,10");
  sub->add_option("--temperature", o.temperature, "Sampling temperature (0 = greedy)")->capture_default_str();
  sub->add_option("--max-tokens", o.max_tokens, "Tokens to generate")->capture_default_str();
  sub->add_option("--draft-cost", o.draft_cost, "Draft forward cost relative to the target")->capture_default_str();
  sub->add_option("--overhead", o.overhead, "Fixed per-cycle overhead")->capture_default_str();
  sub->add_option("--bins", o.bins, "Calibration bins")->capture_default_str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic draft tree speculative decoding on tabular toy models", "dyntree"};
  app.require_subcommand(1);

  Options gen, bench, ablate, calib, cert;
  bench.modes = {"eagle2", "chain_sps", "vanilla"};
  bench.n_prompts = ablate.n_prompts = calib.n_prompts = 20;
  cert.max_tokens = 3;

  auto* g = app.add_subcommand("generate", "Generate tokens for one prompt");
  add_model_flags(g, gen);
  add_engine_flags(g, gen, false);
  g->add_flag("--dump-tree", gen.dump_tree, "Include every cycle's flattened draft in the report");

  auto* b = app.add_subcommand("bench", "Compare modes over a prompt set");
  add_model_flags(b, bench);
  add_engine_flags(b, bench, true);

  auto* a = app.add_subcommand("ablate", "Run the four tree ablation arms at equal budgets");
  add_model_flags(a, ablate);
  add_engine_flags(a, ablate, false);

  auto* c = app.add_subcommand("calibrate", "Acceptance rate by draft confidence");
  add_model_flags(c, calib);
  add_engine_flags(c, calib, false);
  c->add_option("--csv", calib.csv, "Write plot data CSV here");

  auto* v = app.add_subcommand("certify", "Check the engine's output law against the target");
  add_model_flags(v, cert);
  add_engine_flags(v, cert, false);
  v->add_option("--alpha", cert.alpha, "Significance level")->capture_default_str();
  v->add_option("--n-samples", cert.n_samples, "Monte Carlo generations")->capture_default_str();
  v->add_flag("--inject-bias", cert.inject_bias, "Test only: add 0.05 to every acceptance probability");

  MakeModelOptions mk;
  auto* r = app.add_subcommand("make-model", "Write a random tabular model");
  r->add_option("--vocab", mk.vocab, "Vocabulary size")->capture_default_str();
  r->add_option("--order", mk.order, "Markov order")->capture_default_str();
  r->add_option("--seed", mk.seed, "RNG seed")->capture_default_str();
  r->add_option("--concentration", mk.concentration, "Dirichlet concentration")->capture_default_str();
  r->add_option("--out", mk.out, "Output file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  if (g->parsed()) return cmd_generate(gen, out);
  if (b->parsed()) return cmd_bench(bench, out);
  if (a->parsed()) return cmd_ablate(ablate, out);
  if (c->parsed()) return cmd_calibrate(calib, out);
  if (v->parsed()) return cmd_certify(cert, out);
  if (r->parsed()) return cmd_make_model(mk);
  return kUsageError;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const InsufficientSamples& e) {
    err << "error: " << e.what() << " (required n = " << e.required_n() << ")\n";
    return kUsageError;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const GuardExceeded& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace dyntree::cli
