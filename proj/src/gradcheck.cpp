#include "looprl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "looprl/diffusion.hpp"
#include "looprl/nn.hpp"
#include "looprl/rng.hpp"

namespace looprl {
namespace {

constexpr std::uint64_t kMlpTag = 0x6c9;
constexpr std::uint64_t kTrajTag = 0x7a7;

// Five-point central differences of f over every coordinate of `params`,
// compared with `analytic`. f reads the parameters through the same vector.
// The log-density is sharply curved when sigma_t is small, so the O(h^2)
// three-point stencil is not accurate enough at h = 1e-4.
void compare(GradcheckSuite& suite, std::size_t case_index, std::span<double> params,
             std::span<const double> analytic, const std::function<double()>& f,
             const GradcheckOptions& options, std::size_t coordinate_offset = 0) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    const double h = options.step;
    auto at = [&](double offset) {
      params[i] = saved + offset;
      return f();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    params[i] = saved;
    const double a = options.inject_sign_flip ? -analytic[i] : analytic[i];
    const double rel = relative_error(a, numeric, options.denominator_floor);
    suite.max_rel_error = std::max(suite.max_rel_error, rel);
    ++suite.coordinates;
    if (!(rel < options.tolerance)) {
      suite.mismatches.push_back({case_index, coordinate_offset + i, a, numeric, rel});
    }
  }
}

std::vector<double> normals(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& s : suites) m = std::max(m, s.max_rel_error);
  return m;
}

GradcheckSuite check_mlp_backward(const GradcheckOptions& options) {
  GradcheckSuite suite;
  suite.name = "mlp_backward";
  for (std::size_t c = 0; c < options.cases; ++c) {
    Rng rng = make_stream(options.seed, stream_id(kMlpTag, c));
    const MlpSpec spec(3 + c % 5, {4 + c % 3, 3 + (c * 7) % 4}, 1 + c % 3);
    ParamVector params(spec);
    {
      auto values = params.mutable_values();
      const auto init = normals(values.size(), rng, 0.7);
      std::copy(init.begin(), init.end(), values.begin());
    }
    std::vector<double> input = normals(spec.input_dim(), rng);
    const std::vector<double> cot = normals(spec.output_dim(), rng);

    Tape tape;
    mlp_forward(spec, params, input, tape);
    const MlpGradient grad = mlp_backward(spec, params, tape, cot);

    auto objective = [&]() {
      Tape scratch;
      const auto out = mlp_forward(spec, params, input, scratch);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * cot[i];
      return s;
    };
    // Perturb a copy and write it back so the ParamVector stays consistent.
    std::vector<double> theta(params.values().begin(), params.values().end());
    auto via_theta = [&]() {
      auto values = params.mutable_values();
      std::copy(theta.begin(), theta.end(), values.begin());
      return objective();
    };
    compare(suite, c, theta, grad.params, via_theta, options);
    via_theta();
    compare(suite, c, input, grad.input, objective, options, theta.size());
    ++suite.cases;
  }
  return suite;
}

GradcheckSuite check_trajectory_logprob_grad(const GradcheckOptions& options) {
  GradcheckSuite suite;
  suite.name = "trajectory_logprob_grad";
  for (std::size_t c = 0; c < options.cases; ++c) {
    PolicyConfig pc;
    pc.hidden = {6 + c % 3, 5};
    pc.steps = 2 + c % 4;
    pc.init_seed = options.seed * 1000 + c;
    DiffusionPolicy policy(pc);
    Rng rng = make_stream(options.seed, stream_id(kTrajTag, c));
    const Context ctx = make_context(c % pc.num_contexts, pc.num_contexts);
    const RewardFn zero = [](std::span<const double>, const Context&) { return 0.0; };
    const Trajectory traj = rollout(policy, ctx, zero, rng);

    std::vector<double> grad(policy.params().size(), 0.0);
    trajectory_logprob_grad(policy, traj, grad);

    std::vector<double> theta(policy.params().values().begin(), policy.params().values().end());
    auto objective = [&]() {
      auto values = policy.mutable_params().mutable_values();
      std::copy(theta.begin(), theta.end(), values.begin());
      return trajectory_logprob_sum(policy, traj);
    };
    compare(suite, c, theta, grad, objective, options);
    ++suite.cases;
  }
  return suite;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  report.suites.push_back(check_mlp_backward(options));
  report.suites.push_back(check_trajectory_logprob_grad(options));
  return report;
}

std::string format_report(const GradcheckReport& report, std::size_t max_listed) {
  std::ostringstream out;
  out.precision(3);
  for (const auto& s : report.suites) {
    out << s.name << ": " << (s.passed() ? "pass" : "FAIL") << "  cases=" << s.cases
        << " coordinates=" << s.coordinates << " max_rel_error=" << std::scientific
        << s.max_rel_error << std::defaultfloat << '\n';
    const std::size_t n = std::min(max_listed, s.mismatches.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = s.mismatches[i];
      out << "  case " << m.case_index << " coord " << m.coordinate << ": analytic="
          << std::scientific << m.analytic << " numeric=" << m.numeric
          << " rel=" << m.rel_error << std::defaultfloat << '\n';
    }
    if (s.mismatches.size() > n) {
      out << "  ... " << (s.mismatches.size() - n) << " more\n";
    }
  }
  out << "overall: " << (report.passed() ? "pass" : "FAIL") << " max_rel_error=" << std::scientific
      << report.max_rel_error() << '\n';
  return out.str();
}

}  // namespace looprl
