#include <benchmark/benchmark.h>

#include "saldist/dataset.hpp"
#include "saldist/diff_graph.hpp"
#include "saldist/losses.hpp"
#include "saldist/metrics.hpp"
#include "saldist/model.hpp"
#include "saldist/rng.hpp"
#include "saldist/texture.hpp"

using namespace saldist;

namespace {

Grid noise(Rng& rng, Shape shape) {
  Grid g(shape);
  for (double& v : g.values()) v = rng.uniform(0.0, 1.0);
  return g;
}

void BM_Predict(benchmark::State& state) {
  Rng rng(1);
  const ModelParams p = ModelParams::initialize(rng);
  const auto side = static_cast<std::size_t>(state.range(0));
  const Grid img = noise(rng, {3, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(predict(p, img));
}
BENCHMARK(BM_Predict)->Arg(48)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  const auto side = static_cast<std::size_t>(state.range(0));
  DiffGraph g;
  g.conv2d(g.input("x"), g.input("w"), g.input("b"), 3, 1, 1);
  const Grid x = noise(rng, {16, side, side}), w = noise(rng, {32, 16, 9}), b(Shape{32, 1, 1});
  Bindings in;
  in.bind("x", x).bind("w", w).bind("b", b);
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(in));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  const auto side = static_cast<std::size_t>(state.range(0));
  DiffGraph g;
  g.conv2d(g.input("x"), g.input("w"), g.input("b"), 3, 1, 1);
  const Grid x = noise(rng, {16, side, side}), w = noise(rng, {32, 16, 9}), b(Shape{32, 1, 1});
  const Grid seed = noise(rng, {32, side, side});
  Bindings in;
  in.bind("x", x).bind("w", w).bind("b", b);
  for (auto _ : state) {
    g.forward(in);
    benchmark::DoNotOptimize(g.backward(seed));
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_BtmLoss(benchmark::State& state) {
  Rng rng(3);
  const Grid pred = noise(rng, {1, 64, 64});
  const ModalityStack stack(noise(rng, {4, 64, 64}), {Modality::Depth}, {true});
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(btm_loss(pred, stack, k, 200.0));
}
BENCHMARK(BM_BtmLoss)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMicrosecond);

void BM_CsdLoss(benchmark::State& state) {
  Rng rng(4);
  const Grid pred = noise(rng, {1, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(csd_loss(pred, 0.3));
}
BENCHMARK(BM_CsdLoss)->Unit(benchmark::kMicrosecond);

void BM_Metrics(benchmark::State& state) {
  Rng rng(5);
  const Grid pred = noise(rng, {1, 64, 64});
  Grid gt(1, 64, 64);
  for (double& v : gt.values()) v = rng.coin() ? 1.0 : 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(f_beta(pred, gt));
    benchmark::DoNotOptimize(e_measure(pred, gt));
  }
}
BENCHMARK(BM_Metrics)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
