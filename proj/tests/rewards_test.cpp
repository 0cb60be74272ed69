#include <doctest.h>

#include <cmath>
#include <random>

#include "looprl/error.hpp"
#include "looprl/rewards.hpp"

using namespace looprl;

namespace {
Context ctx(std::size_t id) { return make_context(id, 4); }
double q(double x, double y, std::size_t c) { return quadrant_reward(std::vector<double>{x, y}, ctx(c)); }
}  // namespace

TEST_CASE("quadrant reward examples") {
  CHECK(q(0.5, 0.5, 0) == 1.0);
  CHECK(q(-0.5, 0.5, 0) == 0.0);
  CHECK(q(-0.5, 0.5, 1) == 1.0);
  CHECK(q(-0.5, -0.5, 2) == 1.0);
  CHECK(q(0.5, -0.5, 3) == 1.0);
  CHECK(q(0.5, -0.5, 0) == 0.0);
}

TEST_CASE("quadrant boundaries score zero") {
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(q(0.0, 1.0, c) == 0.0);
    CHECK(q(1.0, 0.0, c) == 0.0);
    CHECK(q(0.0, 0.0, c) == 0.0);
    CHECK(q(-0.0, -1.0, c) == 0.0);
  }
}

TEST_CASE("quadrant reward depends only on signs") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    const double x = n(rng), y = n(rng), s = std::exp(3 * n(rng));
    for (std::size_t c = 0; c < 4; ++c) CHECK(q(x, y, c) == q(s * x, s * y, c));
  }
}

TEST_CASE("quadrant reward needs four contexts") {
  CHECK_THROWS_AS(quadrant_reward(std::vector<double>{1.0, 1.0}, make_context(0, 3)), DomainError);
}

TEST_CASE("mode distance examples") {
  const auto spec = RewardSpec::defaults(RewardKind::mode_distance);
  const std::vector<double> center{1.5, 1.5};
  CHECK(mode_distance_reward(center, ctx(0), spec) == 1.0);
  const std::vector<double> one_away{1.5 + 0.6, 1.5 - 0.8};  // distance 1 = bandwidth
  CHECK(mode_distance_reward(one_away, ctx(0), spec) == doctest::Approx(0.36787944117144233).epsilon(1e-13));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x{n(rng), n(rng)};
    const std::size_t c = i % 4;
    const double cx = (c == 0 || c == 3) ? 1.5 : -1.5;
    const double cy = (c <= 1) ? 1.5 : -1.5;
    const double hand = std::exp(-((x[0] - cx) * (x[0] - cx) + (x[1] - cy) * (x[1] - cy)));
    CHECK(std::abs(mode_distance_reward(x, ctx(c), spec) - hand) < 1e-12);
  }
}

TEST_CASE("mode distance decreases strictly along any ray from the center") {
  const auto spec = RewardSpec::defaults(RewardKind::mode_distance);
  double prev = 2.0;
  for (int i = 0; i < 50; ++i) {
    const double d = 0.05 * i;
    const double r = mode_distance_reward(std::vector<double>{-1.5 + 0.6 * d, -1.5 + 0.8 * d}, ctx(2), spec);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("rewards stay in [0, 1]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (const auto& name : registered_rewards()) {
    const RewardFn f = reward_registry(name);
    for (int i = 0; i < 500; ++i) {
      const double r = f(std::vector<double>{n(rng), n(rng)}, ctx(i % 4));
      CHECK(std::isfinite(r));
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
  }
}

TEST_CASE("composite reward averages the two components") {
  const auto spec = RewardSpec::defaults(RewardKind::composite);
  const std::vector<double> x{1.0, 0.7};
  CHECK(composite_reward(x, ctx(0), spec) ==
        doctest::Approx(0.5 * (1.0 + mode_distance_reward(x, ctx(0), spec))));
}

TEST_CASE("registry resolves names and rejects unknown ones") {
  const std::vector<double> x{0.5, 0.5};
  CHECK(reward_registry("quadrant_binding")(x, ctx(0)) == quadrant_reward(x, ctx(0)));
  CHECK(reward_registry("mode_distance")(x, ctx(0)) ==
        mode_distance_reward(x, ctx(0), RewardSpec::defaults(RewardKind::mode_distance)));
  try {
    reward_registry("bogus");
    FAIL("expected LookupError");
  } catch (const LookupError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("quadrant_binding") != std::string::npos);
    CHECK(msg.find("mode_distance") != std::string::npos);
  }
}

TEST_CASE("reward spec validation") {
  RewardSpec spec = RewardSpec::defaults(RewardKind::mode_distance);
  CHECK_NOTHROW(spec.validate());
  spec.bandwidth = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = RewardSpec::defaults(RewardKind::mode_distance);
  spec.mode_centers[1] = spec.mode_centers[0];
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.mode_centers.resize(1);
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
