#include "looprl/estimators.hpp"

#include <cmath>
#include <limits>

#include "looprl/error.hpp"

namespace looprl {
namespace {

void require_fresh(const DiffusionPolicy& policy, const Trajectory& traj, EstimatorKind kind) {
  if (traj.sampler_version != policy.version()) {
    throw StalenessError(std::string(to_string(kind)) + " is on-policy: trajectory sampled by snapshot " +
                         std::to_string(traj.sampler_version) + ", current snapshot is " +
                         std::to_string(policy.version()));
  }
}

void require_stored_logprobs(const DiffusionPolicy& policy, const Trajectory& traj) {
  if (traj.step_logprobs.size() != policy.steps()) {
    throw ContractError("clipped estimator needs stored per-step log-probs for every transition");
  }
}

void require_group_size(const TrajectoryGroup& group, EstimatorKind kind) {
  if (group.size() < 2) {
    throw ConfigError(std::string(to_string(kind)) + " needs K >= 2 trajectories per group");
  }
}

struct Flattened {
  std::vector<const Trajectory*> trajs;
  std::vector<double> advantages;
  std::vector<double> scales;  // 1 / (G * K_g) per trajectory
};

// Constant per-trajectory weights: the on-policy score-function estimators.
GradientEstimate on_policy_estimate(const DiffusionPolicy& policy, const Flattened& flat,
                                    EstimatorKind kind, std::size_t k, Execution exec) {
  for (const Trajectory* t : flat.trajs) require_fresh(policy, *t, kind);
  GradientEstimate est;
  est.kind = kind;
  est.k_used = k;
  if (flat.trajs.empty()) {
    est.grad.assign(policy.spec().param_count(), 0.0);
    return est;
  }
  est.grad = weighted_score(
      policy, flat.trajs,
      [&](std::size_t i, std::span<const double>, std::span<double> w) {
        const double a = flat.advantages[i] * flat.scales[i];
        std::fill(w.begin(), w.end(), a);
      },
      exec);
  double surrogate = 0.0;
  for (std::size_t i = 0; i < flat.trajs.size(); ++i) {
    surrogate += flat.scales[i] * flat.advantages[i] * static_cast<double>(flat.trajs[i]->steps());
  }
  est.surrogate_value = surrogate;
  return est;
}

GradientEstimate clipped_estimate(const DiffusionPolicy& policy, const Flattened& flat,
                                  const ClipConfig& config, EstimatorKind kind, std::size_t k,
                                  Execution exec) {
  config.validate();
  for (const Trajectory* t : flat.trajs) require_stored_logprobs(policy, *t);
  GradientEstimate est;
  est.kind = kind;
  est.k_used = k;
  const std::size_t n = flat.trajs.size();
  if (n == 0) {
    est.grad.assign(policy.spec().param_count(), 0.0);
    return est;
  }
  std::vector<double> values(n, 0.0);
  std::vector<std::size_t> clipped(n, 0), saturated(n, 0);
  est.grad = weighted_score(
      policy, flat.trajs,
      [&](std::size_t i, std::span<const double> logp, std::span<double> w) {
        const Trajectory& traj = *flat.trajs[i];
        double v = 0.0;
        for (std::size_t t = 0; t < logp.size(); ++t) {
          const auto ratio = importance_ratio(logp[t], traj.step_logprobs[t]);
          const auto term = surrogate_step(ratio.value, flat.advantages[i], config);
          v += term.value;
          w[t] = term.weight * flat.scales[i];
          clipped[i] += term.clipped ? 1 : 0;
          saturated[i] += ratio.saturated ? 1 : 0;
        }
        values[i] = v;
      },
      exec);
  std::size_t total_steps = 0, total_clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    est.surrogate_value += flat.scales[i] * values[i];
    total_steps += flat.trajs[i]->steps();
    total_clipped += clipped[i];
    est.saturated_steps += saturated[i];
  }
  est.clip_active_fraction =
      total_steps == 0 ? 0.0 : static_cast<double>(total_clipped) / static_cast<double>(total_steps);
  return est;
}

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::reinforce: return "reinforce";
    case EstimatorKind::reinforce_bc: return "reinforce_bc";
    case EstimatorKind::rloo: return "rloo";
    case EstimatorKind::ppo_clip: return "ppo_clip";
    case EstimatorKind::loop: return "loop";
  }
  return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
  for (auto kind : {EstimatorKind::reinforce, EstimatorKind::reinforce_bc, EstimatorKind::rloo,
                    EstimatorKind::ppo_clip, EstimatorKind::loop}) {
    if (name == to_string(kind)) return kind;
  }
  throw LookupError("unknown estimator '" + std::string(name) +
                    "' (valid: reinforce, reinforce_bc, rloo, ppo_clip, loop)");
}

bool is_on_policy(EstimatorKind kind) {
  return kind == EstimatorKind::reinforce || kind == EstimatorKind::reinforce_bc ||
         kind == EstimatorKind::rloo;
}

void ClipConfig::validate() const {
  if (unclipped) return;
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("clip epsilon must lie in (0, 1)");
}

double loo_baseline(std::span<const double> rewards, std::size_t i) {
  if (rewards.size() < 2) throw ConfigError("leave-one-out baseline needs K >= 2");
  if (i >= rewards.size()) throw IndexError("leave-one-out index out of range");
  double sum = 0.0;
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    if (j != i) sum += rewards[j];
  }
  return sum / static_cast<double>(rewards.size() - 1);
}

ImportanceRatio importance_ratio(double logp_new, double logp_old) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old)) {
    throw NumericError("importance_ratio: non-finite log-probability");
  }
  const double diff = logp_new - logp_old;
  if (diff > kRatioLogLimit) return {std::exp(kRatioLogLimit), true};
  if (diff < -kRatioLogLimit) return {std::exp(-kRatioLogLimit), true};
  return {std::exp(diff), false};
}

double clip_ratio(double ratio, const ClipConfig& config) {
  if (config.unclipped) return ratio;
  return std::min(std::max(ratio, 1.0 - config.epsilon), 1.0 + config.epsilon);
}

StepTerm surrogate_step(double ratio, double advantage, const ClipConfig& config) {
  if (config.unclipped) return {ratio * advantage, ratio * advantage, false};
  const double lo = 1.0 - config.epsilon;
  const double hi = 1.0 + config.epsilon;
  const bool outside = ratio < lo || ratio > hi;
  const double clipped = clip_ratio(ratio, config);
  if (config.form == SurrogateForm::clip_only) {
    // d/dlogp [clip(r) A] = r A inside the band, 0 on the plateaus.
    return {clipped * advantage, outside ? 0.0 : ratio * advantage, outside};
  }
  // min(r A, clip(r) A): the clipped branch is active (zero slope) only when it
  // is the smaller of the two.
  const bool plateau = (advantage > 0.0 && ratio > hi) || (advantage < 0.0 && ratio < lo);
  const double value = std::min(ratio * advantage, clipped * advantage);
  return {value, plateau ? 0.0 : ratio * advantage, plateau};
}

std::vector<AdvantageRecord> loo_advantages(const TrajectoryGroup& group) {
  std::vector<double> rewards;
  for (const auto& m : group.members) rewards.push_back(m.reward);
  std::vector<AdvantageRecord> out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out.push_back(AdvantageRecord::make(rewards[i], loo_baseline(rewards, i)));
  }
  return out;
}

std::vector<AdvantageRecord> group_mean_advantages(const TrajectoryGroup& group) {
  if (group.members.empty()) return {};
  double mean = 0.0;
  for (const auto& m : group.members) mean += m.reward;
  mean /= static_cast<double>(group.size());
  std::vector<AdvantageRecord> out;
  for (const auto& m : group.members) out.push_back(AdvantageRecord::make(m.reward, mean));
  return out;
}

GradientEstimate reinforce_grad(const DiffusionPolicy& policy, std::span<const Trajectory> trajs,
                                Execution exec) {
  const std::vector<double> zeros(trajs.size(), 0.0);
  return reinforce_grad(policy, trajs, zeros, exec);
}

GradientEstimate reinforce_grad(const DiffusionPolicy& policy, std::span<const Trajectory> trajs,
                                std::span<const double> baselines, Execution exec) {
  if (baselines.size() != trajs.size()) throw ShapeError("reinforce: one baseline per trajectory");
  Flattened flat;
  const double s = trajs.empty() ? 0.0 : 1.0 / static_cast<double>(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    flat.trajs.push_back(&trajs[i]);
    flat.advantages.push_back(AdvantageRecord::make(trajs[i].reward, baselines[i]).advantage);
    flat.scales.push_back(s);
  }
  return on_policy_estimate(policy, flat, EstimatorKind::reinforce, 1, exec);
}

namespace {

template <typename AdvantageFn>
Flattened flatten_groups(std::span<const TrajectoryGroup> groups, EstimatorKind kind,
                         AdvantageFn&& advantages) {
  Flattened flat;
  const double group_scale = groups.empty() ? 0.0 : 1.0 / static_cast<double>(groups.size());
  for (const auto& g : groups) {
    require_group_size(g, kind);
    const auto adv = advantages(g);
    const double s = group_scale / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.members[i].context.id != g.context.id) {
        throw ContractError("group member context differs from the group's context");
      }
      flat.trajs.push_back(&g.members[i]);
      flat.advantages.push_back(adv[i].advantage);
      flat.scales.push_back(s);
    }
  }
  return flat;
}

std::size_t common_k(std::span<const TrajectoryGroup> groups) {
  return groups.empty() ? 0 : groups.front().size();
}

}  // namespace

GradientEstimate reinforce_bc_grad(const DiffusionPolicy& policy,
                                   std::span<const TrajectoryGroup> groups, Execution exec) {
  const auto flat = flatten_groups(groups, EstimatorKind::reinforce_bc, group_mean_advantages);
  return on_policy_estimate(policy, flat, EstimatorKind::reinforce_bc, common_k(groups), exec);
}

GradientEstimate rloo_grad(const DiffusionPolicy& policy, std::span<const TrajectoryGroup> groups,
                           Execution exec) {
  const auto flat = flatten_groups(groups, EstimatorKind::rloo, loo_advantages);
  return on_policy_estimate(policy, flat, EstimatorKind::rloo, common_k(groups), exec);
}

GradientEstimate ppo_surrogate_grad(const DiffusionPolicy& policy,
                                    std::span<const Trajectory> trajs,
                                    std::span<const double> baselines, const ClipConfig& config,
                                    Execution exec) {
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  return ppo_surrogate_grad(policy, ptrs, baselines, config, exec);
}

GradientEstimate ppo_surrogate_grad(const DiffusionPolicy& policy,
                                    std::span<const Trajectory* const> trajs,
                                    std::span<const double> baselines, const ClipConfig& config,
                                    Execution exec) {
  if (baselines.size() != trajs.size()) throw ShapeError("ppo: one baseline per trajectory");
  Flattened flat;
  const double s = trajs.empty() ? 0.0 : 1.0 / static_cast<double>(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    flat.trajs.push_back(trajs[i]);
    flat.advantages.push_back(AdvantageRecord::make(trajs[i]->reward, baselines[i]).advantage);
    flat.scales.push_back(s);
  }
  return clipped_estimate(policy, flat, config, EstimatorKind::ppo_clip, 1, exec);
}

GradientEstimate loop_surrogate_grad(const DiffusionPolicy& policy,
                                     std::span<const TrajectoryGroup> groups,
                                     const ClipConfig& config, Execution exec) {
  for (const auto& g : groups) {
    for (const auto& m : g.members) {
      if (m.sampler_version != g.members.front().sampler_version) {
        throw ContractError("loop: group members were sampled by different snapshots");
      }
    }
  }
  const auto flat = flatten_groups(groups, EstimatorKind::loop, loo_advantages);
  return clipped_estimate(policy, flat, config, EstimatorKind::loop, common_k(groups), exec);
}

std::vector<StepTerm> surrogate_step_terms(const DiffusionPolicy& policy, const Trajectory& traj,
                                           double advantage, const ClipConfig& config) {
  config.validate();
  require_stored_logprobs(policy, traj);
  const auto logp = step_logprobs(policy, traj);
  std::vector<StepTerm> out;
  for (std::size_t t = 0; t < logp.size(); ++t) {
    out.push_back(surrogate_step(importance_ratio(logp[t], traj.step_logprobs[t]).value,
                                 advantage, config));
  }
  return out;
}

PromptBaselineTracker::PromptBaselineTracker(std::size_t num_contexts, double decay)
    : decay_(decay), means_(num_contexts) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("baseline decay must lie in [0, 1)");
}

std::vector<double> PromptBaselineTracker::update(std::span<const TrajectoryGroup> groups) {
  std::vector<double> sums(means_.size(), 0.0);
  std::vector<std::size_t> counts(means_.size(), 0);
  for (const auto& g : groups) {
    if (g.context.id >= means_.size()) throw IndexError("baseline tracker: context id out of range");
    for (const auto& m : g.members) {
      sums[g.context.id] += m.reward;
      ++counts[g.context.id];
    }
  }
  for (std::size_t c = 0; c < means_.size(); ++c) {
    if (counts[c] == 0) continue;
    const double batch_mean = sums[c] / static_cast<double>(counts[c]);
    means_[c] = means_[c] ? decay_ * *means_[c] + (1.0 - decay_) * batch_mean : batch_mean;
  }
  std::vector<double> out;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.size(); ++i) out.push_back(*means_[g.context.id]);
  }
  return out;
}

}  // namespace looprl
