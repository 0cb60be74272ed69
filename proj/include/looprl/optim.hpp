#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "looprl/nn.hpp"

namespace looprl {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam. The caller owns the parameters; the state only
// holds moments and the step counter. Single writer.
class AdamWState {
 public:
  AdamWState(std::size_t param_count, AdamWConfig config);

  // Minimizes: params -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * params).
  // Refuses (throws NumericError, nothing modified) if any gradient entry is non-finite.
  void step(ParamVector& params, std::span<const double> grad);

  const AdamWConfig& config() const { return config_; }
  AdamWConfig& mutable_config() { return config_; }
  std::span<const double> first_moment() const { return first_moment_; }
  std::span<const double> second_moment() const { return second_moment_; }
  std::uint64_t step_count() const { return step_count_; }

 private:
  AdamWConfig config_;
  std::vector<double> first_moment_;
  std::vector<double> second_moment_;
  std::uint64_t step_count_ = 0;
};

double l2_norm(std::span<const double> v);

// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns the
// norm before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

}  // namespace looprl
