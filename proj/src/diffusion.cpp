#include "looprl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "looprl/error.hpp"
#include "looprl/optim.hpp"

namespace looprl {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty()) throw ConfigError("schedule: need at least one step");
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) throw ConfigError("schedule: beta must lie in (0, 1)");
    alpha_[i] = 1.0 - beta_[i];
    prod *= alpha_[i];
    alpha_bar_[i] = prod;
  }
}

std::size_t NoiseSchedule::checked(std::size_t t) const {
  if (t < 1 || t > beta_.size()) {
    throw IndexError("schedule: step " + std::to_string(t) + " outside 1.." +
                     std::to_string(beta_.size()));
  }
  return t - 1;
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    beta[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(beta));
}

std::vector<double> forward_noising(const NoiseSchedule& schedule, std::span<const double> x0,
                                    std::size_t t, std::span<const double> noise) {
  if (x0.size() != noise.size()) throw ShapeError("forward_noising: x0/noise size mismatch");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * noise[i];
  return xt;
}

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double sigma) {
  if (x.size() != mean.size()) throw ShapeError("gaussian_logpdf: dimension mismatch");
  if (!(sigma > 0.0)) throw DomainError("gaussian_logpdf: sigma must be positive");
  const double inv_var = 1.0 / (sigma * sigma);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    sq += d * d;
  }
  const double n = static_cast<double>(x.size());
  return -n * (kHalfLog2Pi + std::log(sigma)) - 0.5 * sq * inv_var;
}

Context make_context(std::size_t id, std::size_t num_contexts) {
  if (id >= num_contexts) {
    throw IndexError("context id " + std::to_string(id) + " outside 0.." +
                     std::to_string(num_contexts - 1));
  }
  Context c{id, std::vector<double>(num_contexts, 0.0)};
  c.embedding[id] = 1.0;
  return c;
}

DiffusionPolicy::DiffusionPolicy(const PolicyConfig& config)
    : config_(config),
      spec_(config.data_dim + config.num_contexts + 1, config.hidden, config.data_dim),
      schedule_(make_schedule(config.steps, config.beta_start, config.beta_end)),
      params_(spec_) {
  if (config_.num_contexts < 1) throw ConfigError("policy: need at least one context");
  sigma_.resize(schedule_.steps());
  for (std::size_t t = 1; t <= schedule_.steps(); ++t) sigma_[t - 1] = std::sqrt(schedule_.beta(t));
  init_glorot(spec_, params_, config_.init_seed);
}

DiffusionPolicy::DiffusionPolicy(const PolicyConfig& config, std::vector<double> params)
    : DiffusionPolicy(config) {
  if (params.size() != spec_.param_count()) {
    throw ShapeError("policy: expected " + std::to_string(spec_.param_count()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  params_ = ParamVector(std::move(params));
}

void DiffusionPolicy::assemble_input(const Context& context, std::size_t t,
                                     std::span<const double> x_t, std::span<double> input) const {
  if (x_t.size() != config_.data_dim) throw ShapeError("policy: state dimension mismatch");
  if (context.embedding.size() != config_.num_contexts) {
    throw ShapeError("policy: context embedding has wrong length");
  }
  if (t < 1 || t > steps()) throw IndexError("policy: step outside 1..T");
  std::copy(x_t.begin(), x_t.end(), input.begin());
  std::copy(context.embedding.begin(), context.embedding.end(), input.begin() + x_t.size());
  input[input.size() - 1] = static_cast<double>(t) / static_cast<double>(steps());
}

void DiffusionPolicy::mean(const Context& context, std::size_t t, std::span<const double> x_t,
                           Tape& tape, std::span<double> out) const {
  double buf[64];
  std::vector<double> heap;
  std::span<double> input;
  if (spec_.input_dim() <= 64) {
    input = std::span<double>(buf, spec_.input_dim());
  } else {
    heap.resize(spec_.input_dim());
    input = heap;
  }
  assemble_input(context, t, x_t, input);
  mlp_forward_into(spec_, params_, input, tape, out);
}

std::vector<double> DiffusionPolicy::mean(const Context& context, std::size_t t,
                                          std::span<const double> x_t) const {
  Tape tape;
  std::vector<double> out(data_dim());
  mean(context, t, x_t, tape, out);
  return out;
}

StepSample reverse_step(const DiffusionPolicy& policy, const Context& context, std::size_t t,
                        std::span<const double> x_t, std::span<const double> noise) {
  if (noise.size() != policy.data_dim()) throw ShapeError("reverse_step: noise size mismatch");
  Tape tape;
  StepSample s;
  s.next.resize(policy.data_dim());
  std::vector<double> mu(policy.data_dim());
  policy.mean(context, t, x_t, tape, mu);
  check_finite(mu, "reverse_step");
  const double sigma = policy.sigma(t);
  for (std::size_t i = 0; i < mu.size(); ++i) s.next[i] = mu[i] + sigma * noise[i];
  s.logprob = gaussian_logpdf(s.next, mu, sigma);
  return s;
}

StepSample reverse_step(const DiffusionPolicy& policy, const Context& context, std::size_t t,
                        std::span<const double> x_t, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> noise(policy.data_dim());
  for (double& n : noise) n = normal(rng);
  return reverse_step(policy, context, t, x_t, noise);
}

double Trajectory::stored_logprob_sum() const {
  double s = 0.0;
  for (double lp : step_logprobs) s += lp;
  return s;
}

Trajectory rollout(const DiffusionPolicy& policy, const Context& context, const RewardFn& reward,
                   Rng& rng) {
  const std::size_t d = policy.data_dim();
  const std::size_t T = policy.steps();
  Trajectory traj;
  traj.context = context;
  traj.data_dim = d;
  traj.states.resize((T + 1) * d);
  traj.step_logprobs.resize(T);
  traj.sampler_version = policy.version();

  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < d; ++i) traj.states[i] = normal(rng);

  Tape tape;
  std::vector<double> mu(d);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = T - k;
    const auto x_t = std::span<const double>(traj.states).subspan(k * d, d);
    policy.mean(context, t, x_t, tape, mu);
    check_finite(mu, "rollout");
    const double sigma = policy.sigma(t);
    auto next = std::span<double>(traj.states).subspan((k + 1) * d, d);
    for (std::size_t i = 0; i < d; ++i) next[i] = mu[i] + sigma * normal(rng);
    traj.step_logprobs[k] = gaussian_logpdf(next, mu, sigma);
  }
  traj.reward = reward(traj.final_state(), context);
  if (!std::isfinite(traj.reward)) throw NumericError("rollout: reward is not finite");
  return traj;
}

void record_steps(const DiffusionPolicy& policy, const Trajectory& traj, ScoreWorkspace& ws) {
  const std::size_t d = policy.data_dim();
  const std::size_t T = traj.steps();
  if (traj.data_dim != d || traj.states.size() != (T + 1) * d) {
    throw ShapeError("trajectory: state storage does not match policy data dim");
  }
  if (T != policy.steps()) throw ShapeError("trajectory: step count does not match policy");
  if (ws.tapes.size() < T) ws.tapes.resize(T);
  ws.means.resize(T * d);
  ws.logps.resize(T);
  ws.weights.assign(T, 0.0);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = T - k;
    auto mu = std::span<double>(ws.means).subspan(k * d, d);
    policy.mean(traj.context, t, traj.state(k), ws.tapes[k], mu);
    ws.logps[k] = gaussian_logpdf(traj.state(k + 1), mu, policy.sigma(t));
  }
}

void accumulate_weighted_score(const DiffusionPolicy& policy, const Trajectory& traj,
                               ScoreWorkspace& ws, std::span<double> grad) {
  const std::size_t d = policy.data_dim();
  const std::size_t T = traj.steps();
  ws.cotangent.resize(d);
  for (std::size_t k = 0; k < T; ++k) {
    const double w = ws.weights[k];
    if (w == 0.0) continue;
    const std::size_t t = T - k;
    const double inv_var = 1.0 / (policy.sigma(t) * policy.sigma(t));
    const auto x_next = traj.state(k + 1);
    // d log N(x; mu, s^2) / d mu = (x - mu) / s^2
    for (std::size_t i = 0; i < d; ++i) {
      ws.cotangent[i] = w * (x_next[i] - ws.means[k * d + i]) * inv_var;
    }
    mlp_backward_into(policy.spec(), policy.params(), ws.tapes[k], ws.cotangent, grad);
  }
}

std::vector<double> step_logprobs(const DiffusionPolicy& policy, const Trajectory& traj) {
  ScoreWorkspace ws;
  record_steps(policy, traj, ws);
  return ws.logps;
}

double trajectory_logprob_sum(const DiffusionPolicy& policy, const Trajectory& traj) {
  double s = 0.0;
  for (double lp : step_logprobs(policy, traj)) s += lp;
  return s;
}

double trajectory_logprob_grad(const DiffusionPolicy& policy, const Trajectory& traj,
                               std::span<double> grad, double scale) {
  if (grad.size() != policy.spec().param_count()) {
    throw ShapeError("trajectory_logprob_grad: gradient buffer has wrong length");
  }
  ScoreWorkspace ws;
  record_steps(policy, traj, ws);
  std::fill(ws.weights.begin(), ws.weights.end(), scale);
  accumulate_weighted_score(policy, traj, ws, grad);
  double s = 0.0;
  for (double lp : ws.logps) s += lp;
  return s;
}

PosteriorCoefficients posterior_mean_coefficients(const NoiseSchedule& schedule, std::size_t t) {
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar_or_one(t - 1);
  const double beta = schedule.beta(t);
  return {std::sqrt(ab_prev) * beta / (1.0 - ab),
          std::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab)};
}

std::vector<double> pretrain_ddpm(DiffusionPolicy& policy, std::span<const LabeledPoint> dataset,
                                  const PretrainConfig& config) {
  if (dataset.empty()) throw ConfigError("pretrain_ddpm: dataset is empty");
  if (config.batch_size < 1) throw ConfigError("pretrain_ddpm: batch_size must be >= 1");
  const std::size_t d = policy.data_dim();
  for (const auto& p : dataset) {
    if (p.x.size() != d) throw ShapeError("pretrain_ddpm: sample dimension mismatch");
    if (p.context >= policy.num_contexts()) throw ConfigError("pretrain_ddpm: context id out of range");
  }

  const auto& spec = policy.spec();
  const std::size_t T = policy.steps();
  std::vector<Context> contexts;
  for (std::size_t c = 0; c < policy.num_contexts(); ++c) {
    contexts.push_back(make_context(c, policy.num_contexts()));
  }

  AdamWState optim(spec.param_count(), AdamWConfig{.lr = config.lr, .weight_decay = 0.0});
  Rng rng = make_stream(config.seed, 0x5eed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_t(1, T);
  std::normal_distribution<double> normal;

  std::vector<double> grad(spec.param_count());
  std::vector<double> noise(d), mu(d), cot(d);
  Tape tape;
  std::vector<double> losses;
  losses.reserve(config.steps);
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const LabeledPoint& p = dataset[pick(rng)];
      const std::size_t t = pick_t(rng);
      for (double& n : noise) n = normal(rng);
      const auto xt = forward_noising(policy.schedule(), p.x, t, noise);
      const auto coef = posterior_mean_coefficients(policy.schedule(), t);
      policy.mean(contexts[p.context], t, xt, tape, mu);
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = mu[i] - (coef.x0 * p.x[i] + coef.xt * xt[i]);
        loss += diff * diff * inv_batch;
        cot[i] = 2.0 * diff * inv_batch;
      }
      mlp_backward_into(spec, policy.params(), tape, cot, grad);
    }
    clip_grad_norm(grad, config.max_grad_norm);
    // Cosine decay to 10% of the base rate.
    const double progress = static_cast<double>(step) / static_cast<double>(config.steps);
    optim.mutable_config().lr =
        config.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress)));
    optim.step(policy.mutable_params(), grad);
    losses.push_back(loss);
  }
  policy.bump_version();
  return losses;
}

}  // namespace looprl
