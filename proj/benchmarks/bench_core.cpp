// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mpgd/autodiff.hpp"
#include "mpgd/losses.hpp"
#include "mpgd/metrics.hpp"
#include "mpgd/models.hpp"
#include "mpgd/rng.hpp"
#include "mpgd/synthbench.hpp"
#include "mpgd/theorylab.hpp"
#include "mpgd/trainer.hpp"

using namespace mpgd;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

models::Model spike_model(std::uint64_t seed) {
  models::ModelConfig mc;
  mc.kind = models::ModelKind::kFcn;
  mc.channels = {2, 8, 1};
  mc.activation = models::Activation::kRelu;
  mc.seed = seed;
  return models::init(mc);
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto input = ad::constant(random_tensor({2, 32, 32}, 1));
  const auto kernels = ad::constant(random_tensor({8, 2, 3, 3}, 2));
  for (auto _ : state) {
    auto out = ad::conv2d(input, kernels);
    benchmark::DoNotOptimize(out->value.data());
  }
}
BENCHMARK(BM_Conv2dForward);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const Tensor x = random_tensor({2, 32, 32}, 3);
  const Tensor k = random_tensor({8, 2, 3, 3}, 4);
  const Tensor target = random_tensor({8, 32, 32}, 5);
  for (auto _ : state) {
    auto kn = ad::parameter(k);
    auto loss = losses::mse(ad::conv2d(ad::constant(x), kn), target);
    ad::backward(loss);
    benchmark::DoNotOptimize(kn->grad.data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = ad::constant(random_tensor({n, n}, 6));
  const auto b = ad::constant(random_tensor({n, n}, 7));
  for (auto _ : state) {
    auto out = ad::matmul(a, b);
    benchmark::DoNotOptimize(out->value.data());
  }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64);

void BM_IasSample(benchmark::State& state) {
  Rng rng(8);
  Tensor target({1, 32, 32});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(0, 1);
  Tensor y = target;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += rng.uniform(-0.05, 0.05);
  for (auto _ : state) {
    auto crit = losses::ias_sample(y, target, losses::kDefaultLambda);
    benchmark::DoNotOptimize(crit.indices.data());
  }
}
BENCHMARK(BM_IasSample);

void BM_AmseBackward(benchmark::State& state) {
  const Tensor target = random_tensor({1, 32, 32}, 9);
  const Tensor yv = random_tensor({1, 32, 32}, 10);
  const auto crit = losses::ias_sample(yv, target, 0.1);
  for (auto _ : state) {
    auto y = ad::parameter(yv);
    auto loss = losses::amse(y, target, crit);
    ad::backward(loss);
    benchmark::DoNotOptimize(y->grad.data());
  }
}
BENCHMARK(BM_AmseBackward);

void BM_TrainStepSpike(benchmark::State& state) {
  synth::SpikeTaskConfig sc;
  sc.n_samples = 16;
  sc.seed = 11;
  const auto [train_set, test_set] = synth::gen_spike_task(sc);
  models::Model model = spike_model(12);
  trainer::Velocity vel = trainer::Velocity::zeros_like(model);
  std::vector<trainer::Example> batch;
  for (std::size_t i = 0; i < 8; ++i)
    batch.push_back({&train_set.inputs[i], &train_set.targets[i]});
  const auto spec = losses::LossSpec::amse(losses::kDefaultLambda);
  std::size_t step = 0;
  for (auto _ : state) {
    auto log = trainer::train_step(model, batch, spec, 0.05, 0.9, vel, step++);
    benchmark::DoNotOptimize(log.loss);
  }
}
BENCHMARK(BM_TrainStepSpike);

void BM_SsimEvaluate(benchmark::State& state) {
  const Tensor x = random_tensor({1, 32, 32}, 13);
  const Tensor y = random_tensor({1, 32, 32}, 14);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::evaluate(x, y).peak_nrmse_avg);
  }
}
BENCHMARK(BM_SsimEvaluate);

void BM_TopkGdStep(benchmark::State& state) {
  const auto p = theory::make_quadratic(8, 100, 10.0, true, 15);
  for (auto _ : state) {
    auto trace = theory::run_topk_gd(p, 5, 10);
    benchmark::DoNotOptimize(trace.back().loss_topk);
  }
}
BENCHMARK(BM_TopkGdStep);

}  // namespace

BENCHMARK_MAIN();
