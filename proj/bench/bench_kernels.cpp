// Serial reference kernels against their OpenMP counterparts.
//
//   bench_kernels --benchmark_filter=Gradient
//
// Thread counts above the core count measure scheduling overhead only.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "casif/kernels.hpp"
#include "casif/rng.hpp"

using namespace casif;

namespace {

constexpr std::size_t kItems = 1000;
constexpr std::size_t kBatch = 128;

std::vector<PrefixExample> make_examples(std::size_t n) {
  Rng rng(11);
  std::vector<PrefixExample> out(n);
  for (auto& ex : out) {
    ex.prefix.resize(static_cast<std::size_t>(rng.range(1, 10)));
    for (auto& v : ex.prefix) v = static_cast<ItemIndex>(rng.below(kItems));
    ex.label = static_cast<ItemIndex>(rng.below(kItems));
  }
  return out;
}

HyperParams bench_hp(std::int64_t dim) {
  HyperParams hp;
  hp.dim = static_cast<std::size_t>(dim);
  return hp;
}

void BM_GradientSerial(benchmark::State& state) {
  const HyperParams hp = bench_hp(state.range(0));
  const ParamSet p = init_params(kItems, hp, 1);
  const auto batch = make_examples(kBatch);
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient_serial(batch, p, hp));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch));
}

void BM_GradientParallel(benchmark::State& state) {
  const HyperParams hp = bench_hp(state.range(0));
  const ParamSet p = init_params(kItems, hp, 1);
  const auto batch = make_examples(kBatch);
  set_worker_threads(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient_parallel(batch, p, hp));
  set_worker_threads(1);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch));
}

void BM_RanksSerial(benchmark::State& state) {
  const HyperParams hp = bench_hp(state.range(0));
  const ParamSet p = init_params(kItems, hp, 2);
  const auto examples = make_examples(1024);
  for (auto _ : state) benchmark::DoNotOptimize(label_ranks_serial(examples, p, hp));
  state.SetItemsProcessed(state.iterations() * 1024);
}

void BM_RanksParallel(benchmark::State& state) {
  const HyperParams hp = bench_hp(state.range(0));
  const ParamSet p = init_params(kItems, hp, 2);
  const auto examples = make_examples(1024);
  set_worker_threads(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(label_ranks_parallel(examples, p, hp));
  set_worker_threads(1);
  state.SetItemsProcessed(state.iterations() * 1024);
}

void thread_grid(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_num_procs();
  for (int dim : {32, 100})
    for (int t = 1; t <= max_threads; t *= 2) b->Args({dim, t});
}

}  // namespace

BENCHMARK(BM_GradientSerial)->Arg(32)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientParallel)->Apply(thread_grid)->ArgNames({"dim", "threads"})->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RanksSerial)->Arg(32)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RanksParallel)->Apply(thread_grid)->ArgNames({"dim", "threads"})->UseRealTime()->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
