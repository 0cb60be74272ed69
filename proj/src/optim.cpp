#include "looprl/optim.hpp"

#include <cmath>

#include "looprl/error.hpp"

namespace looprl {

AdamWState::AdamWState(std::size_t param_count, AdamWConfig config)
    : config_(config), first_moment_(param_count, 0.0), second_moment_(param_count, 0.0) {
  if (!(config_.lr >= 0.0) || !(config_.weight_decay >= 0.0) || !(config_.eps > 0.0) ||
      !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw ConfigError("adamw: invalid hyperparameters");
  }
}

void AdamWState::step(ParamVector& params, std::span<const double> grad) {
  if (params.size() != first_moment_.size() || grad.size() != first_moment_.size()) {
    throw ShapeError("adamw: parameter/gradient/state length mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("adamw: non-finite gradient at index " + std::to_string(i));
    }
  }

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  const double lr = config_.lr;
  const double decay = 1.0 - lr * config_.weight_decay;

  auto p = params.mutable_values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i];
    first_moment_[i] = config_.beta1 * first_moment_[i] + (1.0 - config_.beta1) * g;
    second_moment_[i] = config_.beta2 * second_moment_[i] + (1.0 - config_.beta2) * g * g;
    const double m_hat = first_moment_[i] / bias1;
    const double v_hat = second_moment_[i] / bias2;
    p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
  const double norm = l2_norm(grad);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

}  // namespace looprl
