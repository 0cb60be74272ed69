#include <doctest.h>

#include <omp.h>

#include "looprl/error.hpp"
#include "looprl/kernels.hpp"

using namespace looprl;

namespace {

PolicyConfig small() {
  PolicyConfig pc;
  pc.hidden = {12, 12};
  pc.steps = 6;
  pc.beta_start = 0.01;
  pc.init_seed = 2;
  return pc;
}

const RewardFn kReward = [](std::span<const double> x, const Context& c) {
  return x[0] - x[1] + 0.1 * double(c.id);
};

std::vector<Context> contexts(std::size_t n) {
  std::vector<Context> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_context(i % 4, 4));
  return out;
}

}  // namespace

TEST_CASE("parallel sampling is bit-identical to serial sampling") {
  DiffusionPolicy policy(small());
  const auto ctx = contexts(100);
  const auto a = sample_batch_serial(policy, ctx, kReward, 3, 40);
  for (int threads : {1, 2, 4}) {
    omp_set_num_threads(threads);
    const auto b = sample_batch_parallel(policy, ctx, kReward, 3, 40);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].states == b[i].states);
      CHECK(a[i].step_logprobs == b[i].step_logprobs);
      CHECK(a[i].reward == b[i].reward);
    }
  }
}

TEST_CASE("trajectory i uses stream (seed, base + i)") {
  DiffusionPolicy policy(small());
  const auto ctx = contexts(5);
  const auto batch = sample_batch_serial(policy, ctx, kReward, 9, 100);
  Rng rng = make_stream(9, 103);
  const auto lone = rollout(policy, ctx[3], kReward, rng);
  CHECK(lone.states == batch[3].states);
}

TEST_CASE("parallel weighted score is bit-identical to serial") {
  DiffusionPolicy policy(small());
  const auto trajs = sample_batch_serial(policy, contexts(150), kReward, 5, 0);
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  const StepWeightFn weights = [&](std::size_t i, std::span<const double> logp, std::span<double> w) {
    for (std::size_t t = 0; t < w.size(); ++t) w[t] = trajs[i].reward * (1.0 + 0.01 * logp[t]) * double(t + 1);
  };
  const auto serial = weighted_score_serial(policy, ptrs, weights);
  for (int threads : {1, 3, 4}) {
    omp_set_num_threads(threads);
    CHECK(weighted_score_parallel(policy, ptrs, weights) == serial);
  }
}

TEST_CASE("weighted score agrees with per-trajectory gradients") {
  DiffusionPolicy policy(small());
  const auto trajs = sample_batch_serial(policy, contexts(20), kReward, 6, 0);
  std::vector<const Trajectory*> ptrs;
  std::vector<double> expected(policy.params().size(), 0.0);
  for (const auto& t : trajs) {
    ptrs.push_back(&t);
    trajectory_logprob_grad(policy, t, expected, t.reward);
  }
  const StepWeightFn weights = [&](std::size_t i, std::span<const double>, std::span<double> w) {
    std::fill(w.begin(), w.end(), trajs[i].reward);
  };
  for (auto exec : {Execution::serial, Execution::parallel}) {
    const auto g = weighted_score(policy, ptrs, weights, exec);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("exceptions inside the parallel region reach the caller") {
  DiffusionPolicy policy(small());
  const auto trajs = sample_batch_serial(policy, contexts(64), kReward, 7, 0);
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  const StepWeightFn bad = [](std::size_t i, std::span<const double>, std::span<double>) {
    if (i == 40) throw ContractError("weight failure");
  };
  CHECK_THROWS_AS(weighted_score_parallel(policy, ptrs, bad), ContractError);

  const RewardFn throwing = [](std::span<const double>, const Context& c) -> double {
    if (c.id == 2) throw DomainError("reward failure");
    return 0.0;
  };
  CHECK_THROWS_AS(sample_batch_parallel(policy, contexts(64), throwing, 1, 0), DomainError);
}

TEST_CASE("default execution can be switched") {
  const auto before = default_execution();
  set_default_execution(Execution::serial);
  CHECK(default_execution() == Execution::serial);
  set_default_execution(before);
}
