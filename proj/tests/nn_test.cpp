#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "looprl/error.hpp"
#include "looprl/nn.hpp"

using namespace looprl;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 0.8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Straight-line 2-8-2 forward pass reading weights by hand-computed offsets:
// W0 at 0 (8x2), b0 at 16, W1 at 24 (2x8), b1 at 40.
std::vector<double> reference_2_8_2(const std::vector<double>& p, const std::vector<double>& x) {
  double h[8];
  for (int r = 0; r < 8; ++r) {
    double s = p[16 + r];
    for (int c = 0; c < 2; ++c) s += p[r * 2 + c] * x[c];
    h[r] = std::tanh(s);
  }
  std::vector<double> y(2);
  for (int r = 0; r < 2; ++r) {
    double s = p[40 + r];
    for (int c = 0; c < 8; ++c) s += p[24 + r * 8 + c] * h[c];
    y[r] = s;
  }
  return y;
}

}  // namespace

TEST_CASE("spec rejects zero dimensions") {
  CHECK_THROWS_AS(MlpSpec(0, {4}, 2), ConfigError);
  CHECK_THROWS_AS(MlpSpec(2, {0}, 2), ConfigError);
  CHECK_THROWS_AS(MlpSpec(2, {4}, 0), ConfigError);
}

TEST_CASE("parameter layout is layer-major with weights before biases") {
  const MlpSpec spec(2, {8}, 2);
  CHECK(spec.param_count() == 2 * 8 + 8 + 8 * 2 + 2);
  CHECK(spec.index(0, 0, 0) == 0);
  CHECK(spec.index(0, 3, 1) == 7);
  CHECK(spec.index(0, 5, 2) == 16 + 5);  // bias
  CHECK(spec.index(1, 1, 7) == 24 + 15);
  CHECK(spec.index(1, 1, 8) == 41);
  CHECK(spec.shape_string() == "2-8-2");
  CHECK_THROWS_AS(spec.index(2, 0, 0), IndexError);
  CHECK_THROWS_AS(spec.index(0, 8, 0), IndexError);
}

TEST_CASE("layout index is a bijection") {
  const MlpSpec spec(3, {5, 4}, 2);
  std::vector<int> seen(spec.param_count(), 0);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    for (std::size_t r = 0; r < spec.layer_outputs(l); ++r) {
      for (std::size_t c = 0; c <= spec.layer_inputs(l); ++c) ++seen.at(spec.index(l, r, c));
    }
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("flatten(unflatten(v)) == v exactly") {
  const MlpSpec spec(7, {6, 5}, 2);
  const auto v = random_values(spec.param_count(), 3);
  const auto layers = unflatten(spec, v);
  CHECK(layers.size() == 3);
  CHECK(layers[1].rows == 5);
  CHECK(layers[1].cols == 6);
  CHECK(flatten(spec, layers) == v);
}

TEST_CASE("zero-weight network gives zero output") {
  const MlpSpec spec(3, {4}, 2);
  ParamVector params(spec);
  Tape tape;
  const auto y = mlp_forward(spec, params, std::vector<double>{0.3, -2.0, 5.0}, tape);
  CHECK(y == std::vector<double>{0.0, 0.0});
}

TEST_CASE("single linear layer with identity weights") {
  const MlpSpec spec(2, {}, 2);
  ParamVector params(spec);
  auto v = params.mutable_values();
  v[spec.index(0, 0, 0)] = 1.0;
  v[spec.index(0, 1, 1)] = 1.0;
  Tape tape;
  CHECK(mlp_forward(spec, params, std::vector<double>{1.0, 2.0}, tape) ==
        std::vector<double>{1.0, 2.0});
}

TEST_CASE("random 2-8-2 forward matches a straight-line implementation") {
  const MlpSpec spec(2, {8}, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamVector params(random_values(spec.param_count(), seed));
    const auto x = random_values(2, 100 + seed, 1.5);
    Tape tape;
    const auto y = mlp_forward(spec, params, x, tape);
    const auto ref = reference_2_8_2(std::vector<double>(params.values().begin(), params.values().end()), x);
    CHECK(std::abs(y[0] - ref[0]) < 1e-12);
    CHECK(std::abs(y[1] - ref[1]) < 1e-12);
  }
}

TEST_CASE("forward rejects wrong input length") {
  const MlpSpec spec(2, {3}, 1);
  ParamVector params(spec);
  Tape tape;
  CHECK_THROWS_AS(mlp_forward(spec, params, std::vector<double>{1.0}, tape), ShapeError);
}

TEST_CASE("zero cotangent gives zero gradient") {
  const MlpSpec spec(2, {8}, 2);
  ParamVector params(random_values(spec.param_count(), 9));
  Tape tape;
  mlp_forward(spec, params, std::vector<double>{0.5, -0.25}, tape);
  const auto g = mlp_backward(spec, params, tape, std::vector<double>{0.0, 0.0});
  for (double v : g.params) CHECK(v == 0.0);
  for (double v : g.input) CHECK(v == 0.0);
}

TEST_CASE("scalar linear model y = w x has dL/dw = x") {
  const MlpSpec spec(1, {}, 1);
  ParamVector params(std::vector<double>{0.7, 0.0});
  Tape tape;
  mlp_forward(spec, params, std::vector<double>{3.0}, tape);
  const auto g = mlp_backward(spec, params, tape, std::vector<double>{1.0});
  CHECK(g.params[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(g.params[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.input[0] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("random 2-8-2 backward matches central differences") {
  const MlpSpec spec(2, {8}, 2);
  const double h = 1e-4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<double> theta = random_values(spec.param_count(), 20 + seed);
    const auto x = random_values(2, 40 + seed, 1.0);
    const auto cot = random_values(2, 60 + seed, 1.0);
    ParamVector params(theta);
    Tape tape;
    mlp_forward(spec, params, x, tape);
    const auto g = mlp_backward(spec, params, tape, cot);

    // The oracle differentiates the straight-line reference, not the library.
    auto objective = [&](const std::vector<double>& p) {
      const auto y = reference_2_8_2(p, x);
      return y[0] * cot[0] + y[1] * cot[1];
    };
    for (std::size_t i = 0; i < theta.size(); ++i) {
      auto up = theta, down = theta;
      up[i] += h;
      down[i] -= h;
      const double fd = (objective(up) - objective(down)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.params[i]), 1e-8});
      CHECK(std::abs(fd - g.params[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("backward accumulates into the parameter gradient") {
  const MlpSpec spec(2, {4}, 1);
  ParamVector params(random_values(spec.param_count(), 5));
  Tape tape;
  mlp_forward(spec, params, std::vector<double>{0.1, 0.2}, tape);
  const auto once = mlp_backward(spec, params, tape, std::vector<double>{1.0});
  std::vector<double> acc(spec.param_count(), 0.0);
  mlp_backward_into(spec, params, tape, std::vector<double>{1.0}, acc);
  mlp_backward_into(spec, params, tape, std::vector<double>{1.0}, acc);
  for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(2 * once.params[i]));
}

TEST_CASE("stale or foreign tapes are refused") {
  const MlpSpec spec(2, {4}, 1);
  ParamVector params(random_values(spec.param_count(), 5));
  ParamVector other(random_values(spec.param_count(), 6));
  const std::vector<double> cot{1.0};

  Tape empty;
  CHECK_THROWS_AS(mlp_backward(spec, params, empty, cot), TapeError);

  Tape tape;
  mlp_forward(spec, params, std::vector<double>{0.1, 0.2}, tape);
  CHECK_THROWS_AS(mlp_backward(spec, other, tape, cot), TapeError);

  params.mutable_values()[0] += 1.0;
  CHECK_THROWS_AS(mlp_backward(spec, params, tape, cot), TapeError);
}

TEST_CASE("glorot init is seeded and leaves biases at zero") {
  const MlpSpec spec(7, {16, 16}, 2);
  ParamVector a(spec), b(spec), c(spec);
  init_glorot(spec, a, 1);
  init_glorot(spec, b, 1);
  init_glorot(spec, c, 2);
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
        std::vector<double>(b.values().begin(), b.values().end()));
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) !=
        std::vector<double>(c.values().begin(), c.values().end()));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / double(spec.layer_inputs(l) + spec.layer_outputs(l)));
    for (std::size_t r = 0; r < spec.layer_outputs(l); ++r) {
      CHECK(a.values()[spec.index(l, r, spec.layer_inputs(l))] == 0.0);
      for (std::size_t col = 0; col < spec.layer_inputs(l); ++col) {
        CHECK(std::abs(a.values()[spec.index(l, r, col)]) <= limit);
      }
    }
  }
}
