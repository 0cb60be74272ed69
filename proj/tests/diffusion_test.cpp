#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "looprl/dataset.hpp"
#include "looprl/diffusion.hpp"
#include "looprl/error.hpp"
#include "looprl/rewards.hpp"

using namespace looprl;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Independent isotropic density: product of 1-D densities, then log.
double reference_logpdf(const std::vector<double>& x, const std::vector<double>& m, double s) {
  double p = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - m[i]) / s;
    p *= std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
  }
  return std::log(p);
}

PolicyConfig small_policy(std::size_t steps = 5, std::size_t data_dim = 2) {
  PolicyConfig pc;
  pc.data_dim = data_dim;
  pc.hidden = {8, 8};
  pc.steps = steps;
  pc.init_seed = 3;
  return pc;
}

const RewardFn kNormReward = [](std::span<const double> x, const Context& c) {
  return x[0] * x[0] + 0.5 * x[1] + double(c.id);
};

}  // namespace

TEST_CASE("make_schedule examples") {
  const auto one = make_schedule(1, 0.5, 0.5);
  CHECK(one.beta(1) == 0.5);
  CHECK(one.alpha(1) == 0.5);
  CHECK(one.alpha_bar(1) == 0.5);

  const auto two = make_schedule(2, 0.1, 0.2);
  CHECK(two.beta(1) == doctest::Approx(0.1));
  CHECK(two.beta(2) == doctest::Approx(0.2));
  CHECK(two.alpha_bar(1) == doctest::Approx(0.9));
  CHECK(two.alpha_bar(2) == doctest::Approx(0.72));
}

TEST_CASE("T=20 linear schedule: alpha_bar strictly decreasing, final below 0.2") {
  const auto s = make_schedule(20, 1e-4, 0.2);
  REQUIRE(s.steps() == 20);
  CHECK(s.betas().size() == 20);
  CHECK(s.alphas().size() == 20);
  double product = 1.0;
  for (std::size_t t = 1; t <= 20; ++t) {
    product *= 1.0 - (1e-4 + (0.2 - 1e-4) * double(t - 1) / 19.0);
    CHECK(s.alpha_bar(t) == doctest::Approx(product).epsilon(1e-12));
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.alpha_bar(20) < 0.2);
  CHECK(s.alpha_bar_or_one(0) == 1.0);
}

TEST_CASE("make_schedule rejects bad bounds") {
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(5, 0.0, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(5, 0.3, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(5, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule(5, 0.1, 0.2).beta(6), IndexError);
  CHECK_THROWS_AS(make_schedule(5, 0.1, 0.2).beta(0), IndexError);
}

TEST_CASE("forward_noising closed forms") {
  const auto s = make_schedule(2, 0.1, 0.2);  // alpha_bar(2) = 0.72
  const std::vector<double> x0{1.0, 0.0}, noise{0.3, -0.2};
  const auto xt = forward_noising(s, x0, 2, noise);
  CHECK(std::abs(xt[0] - (std::sqrt(0.72) + std::sqrt(0.28) * 0.3)) < 1e-12);
  CHECK(std::abs(xt[1] - (std::sqrt(0.28) * -0.2)) < 1e-12);

  const auto from_zero = forward_noising(s, std::vector<double>{0.0, 0.0}, 1, noise);
  CHECK(from_zero[0] == doctest::Approx(std::sqrt(0.1) * 0.3));
  CHECK(from_zero[1] == doctest::Approx(std::sqrt(0.1) * -0.2));

  // Smallest beta the schedule accepts: alpha_bar is 1 to within 1e-15.
  const auto near_identity = make_schedule(1, 1e-15, 1e-15);
  const auto same = forward_noising(near_identity, x0, 1, noise);
  CHECK(same[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(same[1]) < 1e-7);

  CHECK_THROWS_AS(forward_noising(s, x0, 3, noise), IndexError);
  CHECK_THROWS_AS(forward_noising(s, x0, 0, noise), IndexError);
}

TEST_CASE("gaussian_logpdf examples") {
  const std::vector<double> zero{0.0}, one{1.0};
  CHECK(gaussian_logpdf(zero, zero, 1.0) == doctest::Approx(-0.918938533204673).epsilon(1e-14));
  CHECK(gaussian_logpdf(one, zero, 1.0) == doctest::Approx(-1.418938533204673).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_logpdf(zero, zero, 0.0), DomainError);
  CHECK_THROWS_AS(gaussian_logpdf(zero, zero, -1.0), DomainError);
  CHECK_THROWS_AS(gaussian_logpdf(zero, std::vector<double>{0.0, 0.0}, 1.0), ShapeError);

  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x{n(rng), n(rng)}, m{n(rng), n(rng)};
    const double s = 0.3 + std::abs(n(rng));
    CHECK(std::abs(gaussian_logpdf(x, m, s) - reference_logpdf(x, m, s)) < 1e-12);
  }
}

TEST_CASE("context is one-hot") {
  const auto c = make_context(2, 4);
  CHECK(c.id == 2);
  CHECK(c.embedding == std::vector<double>{0, 0, 1, 0});
  CHECK_THROWS_AS(make_context(4, 4), IndexError);
}

TEST_CASE("policy shape: input is state + one-hot + t/T") {
  DiffusionPolicy policy(small_policy());
  CHECK(policy.spec().input_dim() == 2 + 4 + 1);
  CHECK(policy.spec().output_dim() == 2);
  for (std::size_t t = 1; t <= 5; ++t) {
    CHECK(policy.sigma(t) == doctest::Approx(std::sqrt(policy.schedule().beta(t))));
  }
  std::vector<double> input(7);
  policy.assemble_input(make_context(1, 4), 3, std::vector<double>{0.5, -1.0}, input);
  CHECK(input == std::vector<double>{0.5, -1.0, 0, 1, 0, 0, 3.0 / 5.0});
}

TEST_CASE("reverse_step with zero noise returns the mean and its own density") {
  DiffusionPolicy policy(small_policy());
  const auto ctx = make_context(0, 4);
  const std::vector<double> xt{0.4, -0.3};
  const auto mu = policy.mean(ctx, 4, xt);
  const auto s = reverse_step(policy, ctx, 4, xt, std::vector<double>{0.0, 0.0});
  CHECK(s.next == mu);
  CHECK(s.logprob == doctest::Approx(gaussian_logpdf(mu, mu, policy.sigma(4))).epsilon(1e-15));
}

TEST_CASE("zero-weight network with sigma 1 returns the forced noise") {
  PolicyConfig pc = small_policy(1);
  pc.beta_start = pc.beta_end = 0.999999;  // sigma = sqrt(beta) ~ 1
  const MlpSpec spec(2 + 4 + 1, pc.hidden, 2);
  DiffusionPolicy policy(pc, std::vector<double>(spec.param_count(), 0.0));
  const std::vector<double> noise{0.7, -1.1};
  const auto s = reverse_step(policy, make_context(3, 4), 1, std::vector<double>{5.0, 5.0}, noise);
  CHECK(s.next[0] == doctest::Approx(0.7 * std::sqrt(0.999999)));
  CHECK(s.next[1] == doctest::Approx(-1.1 * std::sqrt(0.999999)));
}

TEST_CASE("reverse_step is deterministic under a fixed stream") {
  DiffusionPolicy policy(small_policy());
  Rng a = make_stream(5, 9), b = make_stream(5, 9);
  const auto ctx = make_context(2, 4);
  const std::vector<double> xt{0.1, 0.2};
  const auto sa = reverse_step(policy, ctx, 2, xt, a);
  const auto sb = reverse_step(policy, ctx, 2, xt, b);
  CHECK(sa.next == sb.next);
  CHECK(sa.logprob == sb.logprob);
  CHECK_THROWS_AS(reverse_step(policy, ctx, 6, xt, a), IndexError);
}

TEST_CASE("rollout structure and reward placement") {
  DiffusionPolicy policy(small_policy(5));
  Rng rng = make_stream(1, 2);
  const auto ctx = make_context(1, 4);
  const Trajectory traj = rollout(policy, ctx, kNormReward, rng);
  CHECK(traj.states.size() == 6 * 2);
  CHECK(traj.steps() == 5);
  CHECK(traj.step_logprobs.size() == 5);
  CHECK(traj.context.id == 1);
  CHECK(traj.sampler_version == policy.version());
  CHECK(traj.reward == kNormReward(traj.final_state(), ctx));

  // Reward is a function of x_0 only: editing an intermediate state changes nothing.
  Trajectory edited = traj;
  edited.states[2] += 10.0;
  CHECK(kNormReward(edited.final_state(), ctx) == traj.reward);
}

TEST_CASE("T=1 rollout log-prob is the density of its single transition") {
  DiffusionPolicy policy(small_policy(1));
  Rng rng = make_stream(2, 0);
  const auto ctx = make_context(0, 4);
  const Trajectory traj = rollout(policy, ctx, kNormReward, rng);
  const auto mu = policy.mean(ctx, 1, traj.state(0));
  const std::vector<double> x0(traj.state(1).begin(), traj.state(1).end());
  CHECK(traj.step_logprobs[0] == doctest::Approx(reference_logpdf(x0, mu, policy.sigma(1))).epsilon(1e-12));
}

TEST_CASE("recomputed log-probs equal the stored ones at the sampling snapshot") {
  DiffusionPolicy policy(small_policy(20));
  for (std::uint64_t i = 0; i < 10; ++i) {
    Rng rng = make_stream(7, i);
    const Trajectory traj = rollout(policy, make_context(i % 4, 4), kNormReward, rng);
    CHECK(std::abs(trajectory_logprob_sum(policy, traj) - traj.stored_logprob_sum()) < 1e-10);
    const auto per_step = step_logprobs(policy, traj);
    for (std::size_t k = 0; k < per_step.size(); ++k) CHECK(per_step[k] == traj.step_logprobs[k]);
  }
}

TEST_CASE("log-prob gradient matches central differences on a T=2 1-D policy") {
  PolicyConfig pc = small_policy(2, 1);
  pc.beta_start = 0.05;
  pc.beta_end = 0.3;
  DiffusionPolicy policy(pc);
  Rng rng = make_stream(11, 0);
  const Trajectory traj = rollout(policy, make_context(2, 4), kNormReward, rng);
  REQUIRE(traj.data_dim == 1);

  std::vector<double> grad(policy.params().size(), 0.0);
  const double sum = trajectory_logprob_grad(policy, traj, grad);
  CHECK(sum == doctest::Approx(traj.stored_logprob_sum()));

  // Oracle: perturb a copy and recompute the density by hand from stored states.
  const std::vector<double> theta(policy.params().values().begin(), policy.params().values().end());
  auto objective = [&](const std::vector<double>& p) {
    DiffusionPolicy q(pc, p);
    double s = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t t = 2 - k;
      const auto mu = q.mean(traj.context, t, traj.state(k));
      const double x = traj.state(k + 1)[0];
      const double sig = std::sqrt(pc.beta_start + (pc.beta_end - pc.beta_start) * double(t - 1));
      s += -kHalfLog2Pi - std::log(sig) - (x - mu[0]) * (x - mu[0]) / (2 * sig * sig);
    }
    return s;
  };
  const double h = 1e-4;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    const double fd = (objective(up) - objective(down)) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
  }
}

TEST_CASE("log-prob gradient honours scale and accumulates") {
  DiffusionPolicy policy(small_policy(3));
  Rng rng = make_stream(4, 4);
  const Trajectory traj = rollout(policy, make_context(0, 4), kNormReward, rng);
  std::vector<double> g1(policy.params().size(), 0.0), g2(policy.params().size(), 1.0);
  trajectory_logprob_grad(policy, traj, g1);
  trajectory_logprob_grad(policy, traj, g2, -2.5);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(1.0 - 2.5 * g1[i]));
}

TEST_CASE("doubling sigma shifts the log-prob sum by -T d ln2 plus the quadratic rescale") {
  DiffusionPolicy policy(small_policy(4));
  Rng rng = make_stream(8, 1);
  const Trajectory traj = rollout(policy, make_context(3, 4), kNormReward, rng);
  double base = 0.0, doubled = 0.0, quad = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t t = 4 - k;
    const auto mu = policy.mean(traj.context, t, traj.state(k));
    const double s = policy.sigma(t);
    base += gaussian_logpdf(traj.state(k + 1), mu, s);
    doubled += gaussian_logpdf(traj.state(k + 1), mu, 2 * s);
    for (std::size_t d = 0; d < 2; ++d) {
      const double r = traj.state(k + 1)[d] - mu[d];
      quad += r * r / (s * s);
    }
  }
  // Each quadratic term drops from -q/2 to -q/8.
  const double expected = -4.0 * 2.0 * std::numbers::ln2 + 0.375 * quad;
  CHECK(doubled - base == doctest::Approx(expected).epsilon(1e-10));
  CHECK(base == doctest::Approx(traj.stored_logprob_sum()).epsilon(1e-12));
}

TEST_CASE("pretraining with lr = 0 leaves parameters unchanged") {
  DiffusionPolicy policy(small_policy());
  const std::vector<double> before(policy.params().values().begin(), policy.params().values().end());
  std::vector<LabeledPoint> data{{0, {1.0, 1.0}}, {1, {-1.0, 0.5}}};
  PretrainConfig cfg;
  cfg.steps = 1;
  cfg.lr = 0.0;
  const auto losses = pretrain_ddpm(policy, data, cfg);
  CHECK(losses.size() == 1);
  CHECK(std::vector<double>(policy.params().values().begin(), policy.params().values().end()) == before);
  CHECK_THROWS_AS(pretrain_ddpm(policy, std::vector<LabeledPoint>{}, cfg), ConfigError);
}

TEST_CASE("pretraining on a single point pulls samples onto it") {
  PolicyConfig pc;
  pc.hidden = {32, 32};
  DiffusionPolicy policy(pc);
  const std::vector<double> target{0.8, -0.5};
  std::vector<LabeledPoint> data(64, LabeledPoint{0, target});
  PretrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 64;
  pretrain_ddpm(policy, data, cfg);

  double mx = 0.0, my = 0.0;
  const RewardFn zero = [](std::span<const double>, const Context&) { return 0.0; };
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Rng rng = make_stream(99, i);
    const auto traj = rollout(policy, make_context(0, 4), zero, rng);
    mx += traj.final_state()[0] / 1000.0;
    my += traj.final_state()[1] / 1000.0;
  }
  CHECK(std::hypot(mx - target[0], my - target[1]) < 0.2);
}

TEST_CASE("posterior mean coefficients reproduce q(x_{t-1} | x_t, x_0)") {
  const auto s = make_schedule(3, 0.1, 0.3);
  // t = 1: the posterior collapses onto x_0.
  CHECK(posterior_mean_coefficients(s, 1).x0 == doctest::Approx(1.0));
  CHECK(posterior_mean_coefficients(s, 1).xt == doctest::Approx(0.0).epsilon(1e-15));
  // Standard DDPM coefficients written out for t = 3.
  const double ab3 = 0.9 * 0.8 * 0.7, ab2 = 0.9 * 0.8;
  const auto c = posterior_mean_coefficients(s, 3);
  CHECK(c.x0 == doctest::Approx(std::sqrt(ab2) * 0.3 / (1 - ab3)));
  CHECK(c.xt == doctest::Approx(std::sqrt(0.7) * (1 - ab2) / (1 - ab3)));
}
