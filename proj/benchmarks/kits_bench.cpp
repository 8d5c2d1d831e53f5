#include <benchmark/benchmark.h>

#include "kits/baselines.hpp"
#include "kits/graph.hpp"
#include "kits/model.hpp"
#include "kits/rng.hpp"
#include "kits/tensor.hpp"

using namespace kits;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor random_adjacency(std::size_t n, Rng& rng, double density) {
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && rng.bernoulli(density)) a(i, j) = rng.uniform(0.1, 1.0);
    }
  }
  return a;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng);
  const Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// One STGC layer forward and backward on a (B*t*N) x D feature map.
void BM_StgcForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64, steps = 24, windows = 4;
  Rng rng(2);
  const ModelParams params = ModelParams::init({dim, 1, 1, 1}, rng);
  const Propagator prop(random_adjacency(n, rng, 6.0 / static_cast<double>(n)));
  const FeatureLayout layout{windows, steps, n};
  const Tensor z = random_tensor({layout.rows(), dim}, rng);
  for (auto _ : state) {
    Tape tape;
    const BoundModel m = bind(tape, params);
    Var out = stgc_forward(tape.constant(z), layout, prop, m.layers[0], 1);
    tape.backward(sum(out));
    benchmark::DoNotOptimize(tape.grad(m.leaves[0]).data().data());
  }
}
BENCHMARK(BM_StgcForwardBackward)->Arg(36)->Arg(207)->Unit(benchmark::kMillisecond);

void BM_InsertVirtualNodes(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor a = random_adjacency(n, rng, 8.0 / static_cast<double>(n));
  Rng draw(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(insert_virtual_nodes(a, {}, draw).n_virtual);
  }
}
BENCHMARK(BM_InsertVirtualNodes)->Arg(18)->Arg(104)->Arg(160)->Unit(benchmark::kMicrosecond);

void BM_OKriging(benchmark::State& state) {
  const auto n_o = static_cast<std::size_t>(state.range(0));
  const std::size_t n_u = n_o, steps = 24;
  Rng rng(5);
  std::vector<double> x(n_o + n_u), y(n_o + n_u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
  }
  Tensor obs({n_o, n_o});
  Tensor target({n_u, n_o});
  for (std::size_t i = 0; i < n_o; ++i) {
    for (std::size_t j = 0; j < n_o; ++j) obs(i, j) = std::hypot(x[i] - x[j], y[i] - y[j]);
    for (std::size_t u = 0; u < n_u; ++u) {
      target(u, i) = std::hypot(x[n_o + u] - x[i], y[n_o + u] - y[i]);
    }
  }
  const Tensor readings = random_tensor({steps, n_o}, rng);
  const Variogram v{0.3, 1.0, 1e-3};
  for (auto _ : state) {
    benchmark::DoNotOptimize(okriging(readings, obs, target, v).data().data());
  }
}
BENCHMARK(BM_OKriging)->Arg(18)->Arg(104)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
