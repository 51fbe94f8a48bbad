// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "prisk/clustering.hpp"
#include "prisk/network.hpp"
#include "prisk/pipeline.hpp"
#include "prisk/riskfield.hpp"
#include "prisk/scenario.hpp"

using namespace prisk;

namespace {

ScenarioLog busy_log() {
  ScenarioParams p;
  p.duration = 60.0;
  p.participants = 12;
  return generate_synthetic(Template::MixedUrban, p, 5);
}

void BM_extract_features(benchmark::State& state) {
  const auto log = busy_log();
  const PodarConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(log, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(log.frames.size()));
}

void BM_extract_features_parallel(benchmark::State& state) {
  const auto log = busy_log();
  const PodarConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(extract_features_parallel(log, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(log.frames.size()));
}

struct TrainingBatch {
  Model model;
  std::vector<WindowSample> batch;
  std::array<double, kNumLevels> weights;
};

TrainingBatch training_batch() {
  TrainConfig cfg;
  cfg.T = 20;
  cfg.H = 32;
  cfg.d_a = 32;
  TrainingBatch b{init_model(cfg, 6, 1), {}, {}};
  Rng rng(2);
  for (int i = 0; i < 64; ++i) {
    WindowSample s{Tensor(20, 6), Tensor(20, kEnvChannels), i % kNumLevels};
    for (auto& v : s.ego.data) v = rng.normal();
    for (auto& v : s.env.data) v = rng.uniform(0.0, 5.0);
    b.batch.push_back(std::move(s));
  }
  b.weights = inverse_frequency_weights(b.batch);
  return b;
}

void BM_loss_and_grads(benchmark::State& state) {
  const auto b = training_batch();
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grads(b.model, b.batch, b.weights));
}

void BM_loss_and_grads_parallel(benchmark::State& state) {
  const auto b = training_batch();
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_grads_parallel(b.model, b.batch, b.weights, threads));
  }
}

std::vector<FeatureVector> cohort_vectors() {
  const auto roster = synthetic_roster(4, 50, 3);
  std::vector<DriverProfile> ps;
  for (const auto& m : roster) ps.push_back(m.profile);
  return encode_and_normalize(ps).vectors;
}

void BM_kmeans_restarts(benchmark::State& state) {
  const auto x = cohort_vectors();
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_restarts(x, 4, 1, 10));
}

void BM_kmeans_restarts_parallel(benchmark::State& state) {
  const auto x = cohort_vectors();
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_restarts_parallel(x, 4, 1, 10));
}

}  // namespace

BENCHMARK(BM_extract_features)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extract_features_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_and_grads)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_and_grads_parallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kmeans_restarts)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_kmeans_restarts_parallel)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
