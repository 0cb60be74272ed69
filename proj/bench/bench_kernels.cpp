// Serial reference against the OpenMP kernels at the default model size.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "looprl/kernels.hpp"
#include "looprl/rewards.hpp"
#include "looprl/trainer.hpp"

using namespace looprl;

namespace {

const DiffusionPolicy& policy() {
  static const DiffusionPolicy p(TrainConfig{}.policy_config());
  return p;
}

std::vector<Context> contexts(std::size_t n) {
  std::vector<Context> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_context(i % 4, 4));
  return out;
}

void sample(benchmark::State& state, Execution exec) {
  const auto ctx = contexts(static_cast<std::size_t>(state.range(0)));
  const RewardFn reward = reward_registry("quadrant_binding");
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_batch(policy(), ctx, reward, 0, 0, exec));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void score(benchmark::State& state, Execution exec) {
  const RewardFn reward = reward_registry("quadrant_binding");
  const auto trajs =
      sample_batch_serial(policy(), contexts(static_cast<std::size_t>(state.range(0))), reward, 1, 0);
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  const StepWeightFn weights = [&](std::size_t i, std::span<const double>, std::span<double> w) {
    std::fill(w.begin(), w.end(), trajs[i].reward - 0.25);
  };
  for (auto _ : state) {
    benchmark::DoNotOptimize(weighted_score(policy(), ptrs, weights, exec));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SampleBatchSerial(benchmark::State& s) { sample(s, Execution::serial); }
void BM_SampleBatchParallel(benchmark::State& s) { sample(s, Execution::parallel); }
void BM_WeightedScoreSerial(benchmark::State& s) { score(s, Execution::serial); }
void BM_WeightedScoreParallel(benchmark::State& s) { score(s, Execution::parallel); }

}  // namespace

BENCHMARK(BM_SampleBatchSerial)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SampleBatchParallel)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightedScoreSerial)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightedScoreParallel)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
