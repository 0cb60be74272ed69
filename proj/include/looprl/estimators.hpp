#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "looprl/diffusion.hpp"
#include "looprl/kernels.hpp"

namespace looprl {

enum class EstimatorKind { reinforce, reinforce_bc, rloo, ppo_clip, loop };

std::string_view to_string(EstimatorKind kind);
EstimatorKind parse_estimator(std::string_view name);

// REINFORCE, REINFORCE_BC and RLOO only accept trajectories from the current snapshot.
bool is_on_policy(EstimatorKind kind);

enum class SurrogateForm {
  clip_only,        // sum_t clip(r_t) * A
  pessimistic_min,  // sum_t min(r_t * A, clip(r_t) * A)
};

struct ClipConfig {
  double epsilon = 0.1;
  // Ablation: plain importance weighting, no clipping at all.
  bool unclipped = false;
  SurrogateForm form = SurrogateForm::clip_only;

  void validate() const;
};

struct AdvantageRecord {
  double raw_reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;

  static AdvantageRecord make(double reward, double baseline) {
    return {reward, baseline, reward - baseline};
  }
};

struct GradientEstimate {
  std::vector<double> grad;  // ascent direction on the expected reward
  EstimatorKind kind = EstimatorKind::reinforce;
  std::size_t k_used = 1;
  double clip_active_fraction = 0.0;
  double surrogate_value = 0.0;
  std::size_t saturated_steps = 0;
};

// Mean reward of every other member of the group.
double loo_baseline(std::span<const double> rewards, std::size_t i);

// Log-difference magnitude beyond which the ratio is saturated.
inline constexpr double kRatioLogLimit = 50.0;

struct ImportanceRatio {
  double value = 1.0;
  bool saturated = false;
};

// exp(logp_new - logp_old), computed in log space and saturated at exp(+-50).
ImportanceRatio importance_ratio(double logp_new, double logp_old);

double clip_ratio(double ratio, const ClipConfig& config);

// Derivative of the per-step surrogate term with respect to log p_new, i.e.
// the weight multiplying grad log p for that step. Zero on the clip plateau.
struct StepTerm {
  double value = 0.0;
  double weight = 0.0;
  bool clipped = false;
};
StepTerm surrogate_step(double ratio, double advantage, const ClipConfig& config);

// Advantages for a group: reward minus leave-one-out mean.
std::vector<AdvantageRecord> loo_advantages(const TrajectoryGroup& group);
// Advantages for a group: reward minus the group mean including itself.
std::vector<AdvantageRecord> group_mean_advantages(const TrajectoryGroup& group);

GradientEstimate reinforce_grad(const DiffusionPolicy& policy, std::span<const Trajectory> trajs,
                                Execution exec = default_execution());
// REINFORCE with an explicit per-trajectory baseline.
GradientEstimate reinforce_grad(const DiffusionPolicy& policy, std::span<const Trajectory> trajs,
                                std::span<const double> baselines,
                                Execution exec = default_execution());
GradientEstimate reinforce_bc_grad(const DiffusionPolicy& policy,
                                   std::span<const TrajectoryGroup> groups,
                                   Execution exec = default_execution());
GradientEstimate rloo_grad(const DiffusionPolicy& policy, std::span<const TrajectoryGroup> groups,
                           Execution exec = default_execution());

// Clipped importance-sampled surrogate over (possibly stale) trajectories with
// per-trajectory baselines; ratios are taken against the stored step log-probs.
GradientEstimate ppo_surrogate_grad(const DiffusionPolicy& policy,
                                    std::span<const Trajectory> trajs,
                                    std::span<const double> baselines, const ClipConfig& config,
                                    Execution exec = default_execution());
GradientEstimate ppo_surrogate_grad(const DiffusionPolicy& policy,
                                    std::span<const Trajectory* const> trajs,
                                    std::span<const double> baselines, const ClipConfig& config,
                                    Execution exec = default_execution());

// LOOP: K trajectories per prompt, leave-one-out baselines, clipped ratios.
GradientEstimate loop_surrogate_grad(const DiffusionPolicy& policy,
                                     std::span<const TrajectoryGroup> groups,
                                     const ClipConfig& config,
                                     Execution exec = default_execution());

// Per-step surrogate weights (d surrogate / d log p_t) for one trajectory.
std::vector<StepTerm> surrogate_step_terms(const DiffusionPolicy& policy, const Trajectory& traj,
                                           double advantage, const ClipConfig& config);

// Per-prompt exponential running mean of rewards, the DDPO-style baseline for
// the single-sample clipped estimator.
class PromptBaselineTracker {
 public:
  explicit PromptBaselineTracker(std::size_t num_contexts, double decay = 0.9);

  // Folds this batch's per-prompt mean reward into the running mean (first
  // sighting initializes it), then returns one baseline per trajectory in
  // group/member order.
  std::vector<double> update(std::span<const TrajectoryGroup> groups);

  std::optional<double> mean(std::size_t context) const { return means_.at(context); }
  double decay() const { return decay_; }

 private:
  double decay_;
  std::vector<std::optional<double>> means_;
};

}  // namespace looprl
