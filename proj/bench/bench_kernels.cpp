#include <numeric>

#include <benchmark/benchmark.h>

#include "dynmole/trainer.hpp"

namespace {

using namespace dynmole;

struct Fixture {
  Dataset data;
  MoleLayer layer;
  std::vector<std::size_t> batch;

  explicit Fixture(std::size_t batch_size) {
    SyntheticTaskSpec task;
    task.input_dim = 64;
    task.output_dim = 32;
    task.samples_per_cluster = 256;
    data = generate_task(task);
    Rng rng(3);
    LayerDims dims{64, 32, 16, 32};
    layer = init_layer(dims, RoutingConfig::hybrid(4), rng, data.pretrained);
    // Nonzero B and W_g so every expert path does real work.
    for (auto& e : layer.experts)
      for (double& v : e.b.data()) v = rng.normal() * 0.1;
    for (double& v : layer.router.w_g.data()) v = rng.normal();
    batch.resize(batch_size);
    std::iota(batch.begin(), batch.end(), std::size_t{0});
  }
};

void BM_BatchStep(benchmark::State& state, Backend backend) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  const LossConfig loss;
  for (auto _ : state) {
    auto r = batch_step(backend, f.layer, f.data.samples, f.batch, loss);
    benchmark::DoNotOptimize(r.total_loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_RouteAll(benchmark::State& state, Backend backend) {
  Fixture f(1);
  for (auto _ : state) {
    auto d = route_all(backend, f.layer, f.data.samples);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.data.samples.size()));
}

}  // namespace

BENCHMARK_CAPTURE(BM_BatchStep, serial, Backend::Serial)->Arg(16)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(BM_BatchStep, openmp, Backend::OpenMP)->Arg(16)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(BM_RouteAll, serial, Backend::Serial);
BENCHMARK_CAPTURE(BM_RouteAll, openmp, Backend::OpenMP);

BENCHMARK_MAIN();
