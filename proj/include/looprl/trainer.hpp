#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "looprl/diffusion.hpp"
#include "looprl/estimators.hpp"
#include "looprl/optim.hpp"

namespace looprl {

struct TrainConfig {
  EstimatorKind estimator = EstimatorKind::loop;
  std::size_t k = 4;
  double epsilon = 0.1;
  bool unclipped = false;  // plain importance-weighting ablation
  SurrogateForm surrogate_form = SurrogateForm::clip_only;
  double baseline_decay = 0.9;  // PPO_CLIP running mean

  std::size_t epochs = 60;
  std::size_t groups_per_epoch = 64;
  std::size_t inner_epochs = 4;
  std::size_t minibatch_groups = 16;
  std::uint64_t seed = 0;

  double lr = 2e-5;
  double weight_decay = 1e-4;
  double max_grad_norm = 1.0;

  std::string reward_name = "quadrant_binding";
  std::size_t steps = 20;  // T
  std::vector<std::size_t> hidden = {64, 64};
  double beta_start = 1e-2;
  double beta_end = 0.2;
  std::size_t num_contexts = 4;
  std::size_t validation_samples = 10;  // per prompt

  // Base model.
  std::uint64_t pretrain_seed = 0;
  std::size_t pretrain_steps = 8000;
  std::size_t pretrain_batch = 128;
  double pretrain_lr = 2e-3;
  std::size_t dataset_size = 4000;
  double label_fidelity = 0.25;

  // Variance probe.
  std::size_t probe_groups = 16;
  std::size_t probe_resamples = 1000;
  std::vector<std::size_t> probe_ks = {1, 2, 4, 8};

  // compare
  std::size_t seeds = 5;
  std::vector<std::size_t> compare_ks = {2, 3, 4};
  std::size_t bc_k = 2;

  // Inner passes actually used: on-policy kinds always take exactly one.
  std::size_t effective_inner_epochs() const { return is_on_policy(estimator) ? 1 : inner_epochs; }
  ClipConfig clip() const { return {epsilon, unclipped, surrogate_form}; }
  PolicyConfig policy_config() const;
  void validate() const;
};

struct RolloutBuffer {
  std::vector<TrajectoryGroup> groups;
  std::uint64_t sampler_version = 0;
  std::size_t passes_used = 0;

  double mean_reward() const;
  std::size_t trajectory_count() const;
};

struct MetricsRow {
  std::string run_id;
  std::string estimator;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double surrogate_value = 0.0;
  double grad_norm = 0.0;
  double clip_active_fraction = 0.0;
  double wallclock_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "run_id,estimator,k,seed,epoch,mean_reward,surrogate_value,grad_norm,clip_active_fraction,"
    "wallclock_s";

void write_metrics_header(std::ostream& out);
// With timing disabled the wallclock column is written as 0.
void write_metrics_row(std::ostream& out, const MetricsRow& row, bool timing = true);

// Mutable training state: the policy, its optimizer and the PPO baseline.
struct TrainerState {
  DiffusionPolicy policy;
  AdamWState optimizer;
  PromptBaselineTracker baselines;

  TrainerState(DiffusionPolicy policy, const TrainConfig& config);
};

// groups_per_epoch groups, contexts cycled 0, 1, .., C-1, 0, ..; k members each.
// Member m of group g uses stream make_stream(seed, stream_root + g * k + m).
RolloutBuffer collect_rollouts(const DiffusionPolicy& policy, const TrainConfig& config,
                               const RewardFn& reward, std::uint64_t stream_root,
                               Execution exec = default_execution());

// One epoch on a collected buffer. On-policy kinds: a single full-batch ascent
// step, refused with StalenessError if the buffer is older than the policy.
// Clipped kinds: effective_inner_epochs() passes of shuffled minibatches.
MetricsRow train_epoch(TrainerState& state, RolloutBuffer& buffer, const TrainConfig& config,
                       std::size_t epoch);

// Mean reward over validation_samples fresh rollouts per prompt.
double validation_reward(const DiffusionPolicy& policy, const TrainConfig& config,
                         const RewardFn& reward);

// Builds the mixture dataset and runs denoising pretraining.
struct PretrainResult {
  DiffusionPolicy policy;
  std::vector<LabeledPoint> dataset;
  std::vector<double> losses;
};
PretrainResult pretrain_base(const TrainConfig& config);

// Fraction of `samples` rollouts (prompts cycled round-robin) whose final
// point lies within `radius` of each center.
std::vector<double> mode_occupancy(const DiffusionPolicy& policy,
                                   std::span<const std::vector<double>> centers,
                                   std::size_t samples, double radius, std::uint64_t seed);

struct VarianceRow {
  std::size_t k = 0;
  std::size_t resamples = 0;
  double cov_trace = 0.0;
  double mean_grad_norm = 0.0;
};

struct VarianceReport {
  std::vector<VarianceRow> rows;
  double slope_loglog = 0.0;  // least-squares slope of ln(cov_trace) on ln(k)
};

// Holds the policy fixed and re-estimates the gradient on fresh buffers of
// probe_groups groups. K = 1 is the single-sample clipped estimator with the
// raw reward (no baseline); K >= 2 is LOOP.
VarianceReport variance_probe(const DiffusionPolicy& policy, const TrainConfig& config,
                              const RewardFn& reward, std::size_t num_resamples,
                              std::span<const std::size_t> ks);

void write_variance_csv(std::ostream& out, const VarianceReport& report);

double loglog_slope(std::span<const std::size_t> ks, std::span<const double> traces);

struct RunOptions {
  std::string run_id;
  std::optional<std::filesystem::path> out_dir;  // metrics.csv + checkpoint.txt
  bool timing = true;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  DiffusionPolicy final_policy;
  double base_validation = 0.0;
  double final_validation = 0.0;
};

std::string default_run_id(const TrainConfig& config);

// Fine-tunes `base` (pretraining one if absent) for config.epochs epochs.
ExperimentResult run_experiment(const TrainConfig& config, const RunOptions& options,
                                const DiffusionPolicy* base = nullptr);

struct CompareEntry {
  EstimatorKind estimator;
  std::size_t k;
};

// reinforce (k=1), reinforce_bc (bc_k), ppo_clip (k=1), loop at each of compare_ks.
std::vector<CompareEntry> compare_entries(const TrainConfig& config);

struct CompareRun {
  std::string run_id;
  EstimatorKind estimator;
  std::size_t k;
  std::uint64_t seed;
  double base_validation;
  double final_validation;
};

struct CompareResult {
  std::vector<MetricsRow> rows;
  std::vector<CompareRun> runs;
};

// Every compare entry on seeds config.seed .. config.seed + seeds - 1, sharing
// one pretrained base.
CompareResult run_compare(const TrainConfig& config, const DiffusionPolicy& base);

}  // namespace looprl
