// SPDX-License-Identifier: Apache-2.0
//
// Convolution and whole-network step timings at CIFAR stage shapes.

#include <benchmark/benchmark.h>

#include "propnet/kernels.hpp"
#include "propnet/network.hpp"
#include "propnet/rng.hpp"
#include "propnet/trainer.hpp"

namespace {

using namespace propnet;

Tensor<float> random(const Shape& s, std::uint64_t seed) {
  Stream rng(seed);
  Tensor<float> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

// args: batch, channels, side
void BM_Conv3x3Forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const auto x = random(Shape{n, c, s, s}, 1);
  const auto w = random(Shape{c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, ConvGeometry{1, 1}));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * c * c * 9 * s * s));
}
BENCHMARK(BM_Conv3x3Forward)->Args({64, 16, 32})->Args({64, 32, 16})->Args({64, 64, 8});

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const auto x = random(Shape{n, c, s, s}, 1);
  const auto w = random(Shape{c, c, 3, 3}, 2);
  const auto gy = random(Shape{n, c, s, s}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, w, ConvGeometry{1, 1}, gy));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 4 * n * c * c * 9 * s * s));
}
BENCHMARK(BM_Conv3x3Backward)->Args({64, 16, 32})->Args({64, 32, 16})->Args({64, 64, 8});

// arg: convs per ReLU (1 paired, 2 proportional)
void BM_TrainStepPlain20(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.depth = 20;
  cfg.ratio = Ratio{static_cast<int>(state.range(0)), 1};
  Model<float> model(cfg);
  SgdOptimizer<float> opt(SgdConfig{});
  const Dataset data = make_synthetic(10, 64, 1);
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batch = make_batch<float>(data, idx, compute_normalization(data));
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, opt, batch, 0.01));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 64));
}
BENCHMARK(BM_TrainStepPlain20)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace
