#include <benchmark/benchmark.h>

#include "spagrav/mixture.hpp"
#include "spagrav/sampler.hpp"
#include "spagrav/simulate.hpp"
#include "spagrav/spatial.hpp"

using namespace spagrav;

namespace {

const MixtureTable& table() {
  static const MixtureTable t = MixtureTable::load(std::filesystem::path(SPAGRAV_BENCH_DATA_DIR) / "mixture_table_v1.csv");
  return t;
}

SimulatedDataset dataset(std::size_t n) {
  SimulationSpec s = demo_spec(7);
  s.n = n;
  s.countries = std::max<std::size_t>(2, n / 10);
  return simulate_dataset(s);
}

void BM_Sweep(benchmark::State& state) {
  SimulatedDataset d = dataset(static_cast<std::size_t>(state.range(0)));
  d.spatial.set_logdet_grid(build_logdet_grid(d.spatial, {2000}));
  GibbsSampler sampler(d.designs, d.dyads.flow, d.spatial, table(), PriorSpec{});
  Rng rng(1);
  ChainState st = sampler.initial_state();
  sampler.initialise_augmented(st, rng);
  for (auto _ : state) sampler.sweep(st, rng);
  state.counters["dyads"] = static_cast<double>(d.dyads.size());
}
BENCHMARK(BM_Sweep)->Arg(30)->Arg(60)->Arg(120)->Unit(benchmark::kMillisecond);

void BM_LogDetGrid(benchmark::State& state) {
  const SimulatedDataset d = dataset(static_cast<std::size_t>(state.range(0)));
  const auto method = state.range(1) ? LogDetMethod::approximate : LogDetMethod::exact;
  for (auto _ : state) benchmark::DoNotOptimize(build_logdet_grid(d.spatial, {2000, method}));
}
BENCHMARK(BM_LogDetGrid)->Args({60, 0})->Args({266, 0})->Args({266, 1})->Unit(benchmark::kMillisecond);

void BM_Knn(benchmark::State& state) {
  const SimulatedDataset d = dataset(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(knn_weights(d.regions, 7));
}
BENCHMARK(BM_Knn)->Arg(60)->Arg(266)->Arg(1000)->Unit(benchmark::kMicrosecond);

void BM_IndicatorWeights(benchmark::State& state) {
  const MixtureComponents c = table().components(static_cast<int>(state.range(0)));
  double r = -0.3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(indicator_weights(c, r));
    r += 1e-9;
  }
}
BENCHMARK(BM_IndicatorWeights)->Arg(1)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
