// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "dyntree/draft_tree.hpp"
#include "dyntree/engine.hpp"
#include "dyntree/models.hpp"
#include "dyntree/verification.hpp"

namespace {

using namespace dyntree;

const TabularModel& target() {
  static const TabularModel m = random_model(32, 2, 11, 0.3);
  return m;
}

const DerivedDraftModel& draft() {
  static const DerivedDraftModel d(target(), Distortion::mix(0.3));
  return d;
}

const Context kPrompt{3, 17, 5, 9};

void BM_BuildTree(benchmark::State& state) {
  const int depth = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_tree(kPrompt, draft(), depth, 10, 10));
  }
}
BENCHMARK(BM_BuildTree)->Arg(2)->Arg(4)->Arg(6);

void BM_RerankAndFlatten(benchmark::State& state) {
  const auto tree = build_tree(kPrompt, draft(), 6, 10, 10);
  const auto m = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rerank_and_flatten(tree, m));
  }
}
BENCHMARK(BM_RerankAndFlatten)->Arg(20)->Arg(60)->Arg(200);

void BM_MaskedTargets(benchmark::State& state) {
  const auto flat = rerank_and_flatten(build_tree(kPrompt, draft(), 6, 10, 10), 60);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_masked_target_dists(target(), kPrompt, flat));
  }
}
BENCHMARK(BM_MaskedTargets);

void BM_VerifyTree(benchmark::State& state) {
  const auto flat = rerank_and_flatten(build_tree(kPrompt, draft(), 6, 10, 10), 60);
  const auto targets = compute_masked_target_dists(target(), kPrompt, flat);
  Rng rng(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(verify_tree(targets, flat, rng));
  }
}
BENCHMARK(BM_VerifyTree);

void BM_Generate(benchmark::State& state) {
  EngineConfig cfg;
  cfg.mode = static_cast<Mode>(state.range(0));
  cfg.max_tokens = 256;
  const SpeculativeEngine engine(target(), draft(), cfg);
  std::uint64_t seed = 0;
  std::size_t tokens = 0;
  for (auto _ : state) {
    tokens += engine.generate(kPrompt, seed++).emitted.size();
  }
  state.SetLabel(to_string(cfg.mode));
  state.counters["tokens/s"] = benchmark::Counter(static_cast<double>(tokens), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Generate)
    ->Arg(static_cast<int>(Mode::kEagle2))
    ->Arg(static_cast<int>(Mode::kChainSps))
    ->Arg(static_cast<int>(Mode::kVanilla))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
