#include <benchmark/benchmark.h>

#include <vector>

#include "metasurf/analytics.hpp"
#include "metasurf/dataset.hpp"
#include "metasurf/em_solver.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/forward_model.hpp"
#include "metasurf/ops.hpp"
#include "metasurf/param_store.hpp"
#include "metasurf/rng.hpp"

using namespace metasurf;

namespace {

DatasetFile synthetic(std::size_t n) {
  DatasetFile ds = DatasetFile::create(PatternClass::RDN, SolverConfig::desk(), GeneratorParams{}, 1);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.gen_seed = hash64(1, i);
    s.pattern = gen_rdn(s.gen_seed);
    Rng rng(s.gen_seed);
    for (auto& v : s.copr) v = static_cast<float>(rng.uniform(0.2, 0.9));
    ds.samples.push_back(s);
  }
  return ds;
}

}  // namespace

static void BM_SimulateDesk(benchmark::State& state) {
  const Pattern p = gen_rdn(7);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_copr(p, SolverConfig::desk()));
}
BENCHMARK(BM_SimulateDesk)->Unit(benchmark::kMillisecond);

static void BM_SimulateDefault(benchmark::State& state) {
  const Pattern p = gen_rdn(7);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_copr(p, SolverConfig{}));
}
BENCHMARK(BM_SimulateDefault)->Unit(benchmark::kMillisecond)->Iterations(1);

static void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(3);
  ad::Tensor x = ad::kaiming_uniform({64, c, 16, 16}, c * 9, 0.0, rng);
  ad::Tensor k = ad::kaiming_uniform({c, c, 3, 3}, c * 9, 0.0, rng);
  k.set_requires_grad(true);
  for (auto _ : state) {
    ad::Tensor y = ad::sum(ad::conv2d(x, k, 1, 1));
    ad::backward(y);
    k.clear_grad();
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_PredictResnet18S(benchmark::State& state) {
  ForwardModel m = ForwardModel::build(ForwardModelSpec::preset(Arch::Resnet18S), 1);
  std::vector<Pattern> pats;
  for (int i = 0; i < 128; ++i) pats.push_back(gen_rdn(hash64(2, i)));
  std::vector<const Pattern*> ptrs;
  for (const auto& p : pats) ptrs.push_back(&p);
  for (auto _ : state) benchmark::DoNotOptimize(predict_all(m, ptrs, 128));
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_PredictResnet18S)->Unit(benchmark::kMillisecond);

static void BM_FitForest(benchmark::State& state) {
  const DatasetFile ds = synthetic(500);
  ForestHyper h;
  h.n_trees = 10;
  for (auto _ : state) benchmark::DoNotOptimize(fit_rfr(ds, h, 1, 1));
}
BENCHMARK(BM_FitForest)->Unit(benchmark::kMillisecond);

static void BM_EncodeDecode(benchmark::State& state) {
  const DatasetFile ds = synthetic(2000);
  for (auto _ : state) benchmark::DoNotOptimize(decode(encode(ds)));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(encode(ds).size()));
}
BENCHMARK(BM_EncodeDecode)->Unit(benchmark::kMillisecond);

static void BM_BinStats(benchmark::State& state) {
  const DatasetFile ds = synthetic(2000);
  for (auto _ : state) benchmark::DoNotOptimize(bin_stats(ds));
}
BENCHMARK(BM_BinStats)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
