#include <benchmark/benchmark.h>

#include "tpc/model.hpp"
#include "tpc/random.hpp"
#include "tpc/training.hpp"

namespace {

tpc::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  tpc::Rng rng(seed);
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return tpc::Tensor(r, c, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(n, 64, 1);
  const auto b = random_tensor(64, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tpc::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 256));
}
BENCHMARK(BM_Matmul)->Arg(10)->Arg(64)->Arg(256);

void BM_MatmulNt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(n, 64, 1);
  const auto b = random_tensor(256, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tpc::matmul_nt(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 256));
}
BENCHMARK(BM_MatmulNt)->Arg(10)->Arg(64)->Arg(256);

struct Fixture {
  tpc::ModelConfig config;
  tpc::TemporalEncoder encoder{config.backbone, config.backbone_seed};
  tpc::ForecastModel model{config, encoder};
  tpc::Example example;

  Fixture() {
    std::vector<double> values(config.lookback + config.patch_len);
    tpc::Rng rng(3);
    for (double& v : values) v = rng.normal();
    const auto start = tpc::Timestamp::from_civil(2020, 3, 2);
    example = tpc::make_example(config, values, start, start, encoder);
  }
};

void BM_Forward(benchmark::State& state) {
  Fixture f;
  tpc::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.forward(f.example.patches, f.example.bank));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  Fixture f;
  for (auto _ : state) {
    f.model.params().zero_grad();
    tpc::backward(tpc::example_loss(f.model, f.example));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_EncodePrompt(benchmark::State& state) {
  tpc::ModelConfig config;
  tpc::TemporalEncoder encoder(config.backbone, config.backbone_seed);
  std::int64_t k = 0;
  for (auto _ : state) {
    // A fresh span each iteration so the in-memory cache never hits.
    const auto s = tpc::Timestamp::from_civil(2020, 1, 1).plus(3600 * k++);
    benchmark::DoNotOptimize(encoder.embed({s, s.plus(15 * 3600), tpc::Granularity::hourly()}));
  }
}
BENCHMARK(BM_EncodePrompt)->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  Fixture f;
  const std::span<const double> lookback(f.example.patches.patches.data(), f.config.lookback);
  const auto start = tpc::Timestamp::from_civil(2020, 3, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tpc::forecast(f.model, f.encoder, lookback, start, 32));
  }
}
BENCHMARK(BM_Rollout)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
