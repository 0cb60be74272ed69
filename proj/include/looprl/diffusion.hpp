#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "looprl/nn.hpp"
#include "looprl/rng.hpp"

namespace looprl {

// Linear-beta DDPM coefficients. Steps are 1-based: beta(1) .. beta(T).
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> beta);

  std::size_t steps() const { return beta_.size(); }
  double beta(std::size_t t) const { return beta_[checked(t)]; }
  double alpha(std::size_t t) const { return alpha_[checked(t)]; }
  double alpha_bar(std::size_t t) const { return alpha_bar_[checked(t)]; }
  // alpha_bar(0) == 1 by convention.
  double alpha_bar_or_one(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar(t); }

  std::span<const double> betas() const { return beta_; }
  std::span<const double> alphas() const { return alpha_; }
  std::span<const double> alpha_bars() const { return alpha_bar_; }

 private:
  std::size_t checked(std::size_t t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
std::vector<double> forward_noising(const NoiseSchedule& schedule, std::span<const double> x0,
                                    std::size_t t, std::span<const double> noise);

// Isotropic Gaussian log-density.
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double sigma);

struct Context {
  std::size_t id = 0;
  std::vector<double> embedding;  // one-hot, length = number of prompts
};

Context make_context(std::size_t id, std::size_t num_contexts);

struct PolicyConfig {
  std::size_t data_dim = 2;
  std::size_t num_contexts = 4;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t steps = 20;
  double beta_start = 1e-2;
  double beta_end = 0.2;
  std::uint64_t init_seed = 0;
};

// Reverse-process policy: x_{t-1} ~ N(mu(x_t, c, t/T), sigma_t^2 I) with
// sigma_t = sqrt(beta_t). The network maps [x_t, onehot(c), t/T] to the mean.
class DiffusionPolicy {
 public:
  explicit DiffusionPolicy(const PolicyConfig& config);
  DiffusionPolicy(const PolicyConfig& config, std::vector<double> params);

  const PolicyConfig& config() const { return config_; }
  const MlpSpec& spec() const { return spec_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const ParamVector& params() const { return params_; }
  ParamVector& mutable_params() { return params_; }

  std::size_t data_dim() const { return config_.data_dim; }
  std::size_t num_contexts() const { return config_.num_contexts; }
  std::size_t steps() const { return schedule_.steps(); }
  double sigma(std::size_t t) const { return sigma_[t - 1]; }
  std::span<const double> sigmas() const { return sigma_; }

  // Policy snapshot id. Trajectories are stamped with it at sampling time.
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  // Fills `input` (length spec().input_dim()) with the network input for (x_t, c, t).
  void assemble_input(const Context& context, std::size_t t, std::span<const double> x_t,
                      std::span<double> input) const;

  // Predicted mean of x_{t-1}; records the forward pass on `tape`.
  void mean(const Context& context, std::size_t t, std::span<const double> x_t, Tape& tape,
            std::span<double> out) const;
  std::vector<double> mean(const Context& context, std::size_t t, std::span<const double> x_t) const;

 private:
  PolicyConfig config_;
  MlpSpec spec_;
  NoiseSchedule schedule_;
  std::vector<double> sigma_;
  ParamVector params_;
  std::uint64_t version_ = 0;
};

struct StepSample {
  std::vector<double> next;
  double logprob = 0.0;
};

// One ancestral step with caller-provided standard normal noise.
StepSample reverse_step(const DiffusionPolicy& policy, const Context& context, std::size_t t,
                        std::span<const double> x_t, std::span<const double> noise);
StepSample reverse_step(const DiffusionPolicy& policy, const Context& context, std::size_t t,
                        std::span<const double> x_t, Rng& rng);

// One reverse rollout. states holds x_T .. x_0 flattened; step k (0-based)
// is the transition states[k] -> states[k+1] at diffusion step t = T - k.
struct Trajectory {
  Context context;
  std::size_t data_dim = 0;
  std::vector<double> states;         // (T + 1) * data_dim
  std::vector<double> step_logprobs;  // T, under the sampling snapshot
  double reward = 0.0;
  std::uint64_t sampler_version = 0;

  std::size_t steps() const { return step_logprobs.size(); }
  std::span<const double> state(std::size_t k) const {
    return std::span<const double>(states).subspan(k * data_dim, data_dim);
  }
  std::span<const double> final_state() const { return state(steps()); }
  double stored_logprob_sum() const;
};

struct TrajectoryGroup {
  Context context;
  std::vector<Trajectory> members;

  std::size_t size() const { return members.size(); }
};

using RewardFn = std::function<double(std::span<const double>, const Context&)>;

Trajectory rollout(const DiffusionPolicy& policy, const Context& context, const RewardFn& reward,
                   Rng& rng);

// Per-step log-probabilities of the stored transitions under the CURRENT
// parameters (length T, same order as step_logprobs).
std::vector<double> step_logprobs(const DiffusionPolicy& policy, const Trajectory& traj);
double trajectory_logprob_sum(const DiffusionPolicy& policy, const Trajectory& traj);

// grad += scale * d/dtheta sum_t log p(x_{t-1} | x_t, c). Returns the log-prob sum.
double trajectory_logprob_grad(const DiffusionPolicy& policy, const Trajectory& traj,
                               std::span<double> grad, double scale = 1.0);

// Scratch buffers for the per-trajectory score kernel; one per worker.
struct ScoreWorkspace {
  std::vector<Tape> tapes;
  std::vector<double> input;
  std::vector<double> means;  // T * data_dim
  std::vector<double> logps;
  std::vector<double> weights;
  std::vector<double> cotangent;
};

// Forward pass over every stored transition with the current parameters.
// Leaves tapes/means/logps in `ws` for a following accumulate_weighted_score.
void record_steps(const DiffusionPolicy& policy, const Trajectory& traj, ScoreWorkspace& ws);

// grad += sum_t ws.weights[t] * d/dtheta log p_t, using tapes from record_steps.
void accumulate_weighted_score(const DiffusionPolicy& policy, const Trajectory& traj,
                               ScoreWorkspace& ws, std::span<double> grad);

struct LabeledPoint {
  std::size_t context = 0;
  std::vector<double> x;
};

struct PretrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 128;
  double lr = 2e-3;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 0;
};

// Denoising pretraining: regresses the network output onto the true posterior
// mean of q(x_{t-1} | x_t, x_0) with t uniform over 1..T. Returns per-step loss.
std::vector<double> pretrain_ddpm(DiffusionPolicy& policy, std::span<const LabeledPoint> dataset,
                                  const PretrainConfig& config);

// Posterior mean coefficients of q(x_{t-1} | x_t, x_0): mean = c0 * x0 + ct * x_t.
struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
};
PosteriorCoefficients posterior_mean_coefficients(const NoiseSchedule& schedule, std::size_t t);

}  // namespace looprl
