// Serial reference vs OpenMP kernel. Arg 0 is serial, 1 is parallel.
#include <benchmark/benchmark.h>

#include <vector>

#include "opgran/enrich_sup.hpp"
#include "opgran/enrich_unsup.hpp"
#include "opgran/granularity.hpp"
#include "opgran/metrics.hpp"
#include "opgran/rng.hpp"
#include "opgran/simulator.hpp"

using namespace opgran;

namespace {

ExecPolicy policy_of(const benchmark::State& state) {
  return state.range(0) == 0 ? ExecPolicy::serial : ExecPolicy::parallel;
}

std::vector<double> uniform_points(std::size_t n) {
  Stream rng(1, 0, StreamDomain::simulate);
  std::vector<double> p(n);
  for (auto& v : p) v = rng.uniform();
  return p;
}

SimulatorConfig sim_config(std::size_t n) {
  SimulatorConfig c;
  c.n = n;
  c.seed = 1;
  c.subpops[0].latent_mean = -1.0;
  return c;
}

void BM_granularity(benchmark::State& state) {
  const auto pts = uniform_points(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(granularity(pts, 1e-4, policy_of(state)));
}

void BM_kde(benchmark::State& state) {
  const auto pts = uniform_points(static_cast<std::size_t>(state.range(1)));
  std::vector<double> grid(512);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 511.0;
  for (auto _ : state) benchmark::DoNotOptimize(kde_density(pts, grid, policy_of(state)));
}

void BM_enrich_unsupervised(benchmark::State& state) {
  auto pts = uniform_points(static_cast<std::size_t>(state.range(1)));
  for (auto& v : pts) v = quantize_to_grid(v, 20);
  for (auto _ : state) benchmark::DoNotOptimize(enrich_unsupervised(pts, 3, policy_of(state)));
}

void BM_simulate(benchmark::State& state) {
  const auto cfg = sim_config(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(simulate(cfg, policy_of(state)));
}

void BM_train_grid(benchmark::State& state) {
  const auto sim = simulate(sim_config(static_cast<std::size_t>(state.range(1))));
  const auto rows = build_training_rows(sim.records, Variant::one_call);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(train(rows, cfg));
}

}  // namespace

BENCHMARK(BM_granularity)->ArgsProduct({{0, 1}, {10000, 100000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kde)->ArgsProduct({{0, 1}, {10000, 100000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_enrich_unsupervised)->ArgsProduct({{0, 1}, {100000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_simulate)->ArgsProduct({{0, 1}, {20000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_train_grid)->ArgsProduct({{0, 1}, {2000}})->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
