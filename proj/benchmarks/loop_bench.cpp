#include <benchmark/benchmark.h>

#include "eigenshot/harness.hpp"

namespace {

void BM_EigenLoopSeed(benchmark::State& state) {
  const nlohmann::json doc = {{"scenario", "bench"},
                              {"generator", "blobs-standard"},
                              {"ledger", {{"C", 10}, {"epsilon", 5}, {"b", 1}}},
                              {"strategy", state.range(0) == 0 ? "eigen" : "random"},
                              {"seeds", {1}}};
  const auto scenario = eigenshot::scenario_from_json(doc, ".");
  const auto prepared = eigenshot::prepare_run(scenario, 1);
  for (auto _ : state) {
    auto terminal = eigenshot::run_seed(scenario, prepared, 1);
    benchmark::DoNotOptimize(terminal.kappa);
  }
}
BENCHMARK(BM_EigenLoopSeed)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
