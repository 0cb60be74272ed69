#include <doctest.h>

#include "looprl/gradcheck.hpp"

using namespace looprl;

TEST_CASE("relative error uses the floor for tiny values") {
  CHECK(relative_error(1.0, 1.0, 1e-8) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-8) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 1e-10, 1e-8) == doctest::Approx(1e-2));
}

TEST_CASE("default gradcheck passes with max relative error below 1e-4") {
  const auto report = run_gradcheck(GradcheckOptions{});
  CHECK(report.passed());
  CHECK(report.max_rel_error() < 1e-4);
  REQUIRE(report.suites.size() == 2);
  for (const auto& s : report.suites) {
    CHECK(s.cases == 10);
    CHECK(s.coordinates > 0);
  }
  CHECK(format_report(report).find("overall: pass") != std::string::npos);
}

TEST_CASE("sign-flip injection is detected") {
  GradcheckOptions options;
  options.inject_sign_flip = true;
  const auto report = run_gradcheck(options);
  CHECK_FALSE(report.passed());
  for (const auto& s : report.suites) CHECK_FALSE(s.mismatches.empty());
  CHECK(format_report(report, 2).find("FAIL") != std::string::npos);
}

TEST_CASE("other seeds also pass") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    GradcheckOptions options;
    options.seed = seed;
    CHECK(run_gradcheck(options).passed());
  }
}
