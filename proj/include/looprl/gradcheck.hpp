#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace looprl {

struct GradcheckOptions {
  std::size_t cases = 10;
  double step = 1e-4;          // five-point central-difference h
  double tolerance = 1e-4;     // max relative error per coordinate
  double denominator_floor = 1e-8;
  std::uint64_t seed = 0;
  // Mutation hook: negates the analytic gradient, which must then fail.
  bool inject_sign_flip = false;
};

struct GradcheckMismatch {
  std::size_t case_index = 0;
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckSuite {
  std::string name;
  std::size_t cases = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::vector<GradcheckMismatch> mismatches;

  bool passed() const { return mismatches.empty(); }
};

struct GradcheckReport {
  std::vector<GradcheckSuite> suites;

  bool passed() const;
  double max_rel_error() const;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Parameter and input gradients of <mlp(x), c> on small random networks.
GradcheckSuite check_mlp_backward(const GradcheckOptions& options);
// d/dtheta of the summed step log-probabilities of sampled trajectories.
GradcheckSuite check_trajectory_logprob_grad(const GradcheckOptions& options);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

// Human-readable summary; lists at most `max_listed` mismatches per suite.
std::string format_report(const GradcheckReport& report, std::size_t max_listed = 20);

}  // namespace looprl
