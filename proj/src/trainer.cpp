#include "looprl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "looprl/checkpoint.hpp"
#include "looprl/dataset.hpp"
#include "looprl/error.hpp"
#include "looprl/rewards.hpp"
#include "looprl/rng.hpp"

namespace looprl {
namespace {

// Stream-root tags; each purpose draws from a disjoint region of stream ids.
constexpr std::uint64_t kCollectTag = 0xc011ec7;
constexpr std::uint64_t kShuffleTag = 0x5ff1e;
constexpr std::uint64_t kValidationTag = 0x7a11d;
constexpr std::uint64_t kProbeTag = 0x9b0be;
constexpr std::uint64_t kOccupancyTag = 0x0cc0;

std::uint64_t root(std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(tag ^ splitmix64(a)) ^ b);
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_group_based(EstimatorKind kind) {
  return kind == EstimatorKind::reinforce_bc || kind == EstimatorKind::rloo ||
         kind == EstimatorKind::loop;
}

std::vector<const Trajectory*> members_of(std::span<const TrajectoryGroup> groups) {
  std::vector<const Trajectory*> out;
  for (const auto& g : groups) {
    for (const auto& m : g.members) out.push_back(&m);
  }
  return out;
}

std::vector<Trajectory> copy_members(std::span<const TrajectoryGroup> groups) {
  std::vector<Trajectory> out;
  for (const auto& g : groups) out.insert(out.end(), g.members.begin(), g.members.end());
  return out;
}

// Negate (ascent -> descent), clip, step.
double apply_update(TrainerState& state, std::vector<double>& ascent, double max_grad_norm) {
  for (double& g : ascent) g = -g;
  const double norm = clip_grad_norm(ascent, max_grad_norm);
  state.optimizer.step(state.policy.mutable_params(), ascent);
  state.policy.bump_version();
  return norm;
}

}  // namespace

PolicyConfig TrainConfig::policy_config() const {
  PolicyConfig pc;
  pc.data_dim = 2;
  pc.num_contexts = num_contexts;
  pc.hidden = hidden;
  pc.steps = steps;
  pc.beta_start = beta_start;
  pc.beta_end = beta_end;
  pc.init_seed = pretrain_seed;
  return pc;
}

void TrainConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (k < 2 && is_group_based(estimator)) {
    throw ConfigError(std::string(to_string(estimator)) + " needs k >= 2");
  }
  clip().validate();
  if (groups_per_epoch < 1) throw ConfigError("groups_per_epoch must be >= 1");
  if (inner_epochs < 1) throw ConfigError("inner_epochs must be >= 1");
  if (minibatch_groups < 1 || minibatch_groups > groups_per_epoch) {
    throw ConfigError("minibatch_groups must lie in 1..groups_per_epoch");
  }
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (steps < 1) throw ConfigError("T must be >= 1");
  if (num_contexts != 4 && reward_name != "mode_distance") {
    throw ConfigError("quadrant rewards need exactly 4 contexts");
  }
  if (validation_samples < 1) throw ConfigError("validation_samples must be >= 1");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw ConfigError("baseline_decay must lie in [0, 1)");
  if (bc_k < 2) throw ConfigError("bc_k must be >= 2");
  for (std::size_t kk : compare_ks) {
    if (kk < 2) throw ConfigError("compare_ks entries must be >= 2");
  }
  for (std::size_t kk : probe_ks) {
    if (kk < 1) throw ConfigError("probe_ks entries must be >= 1");
  }
}

double RolloutBuffer::mean_reward() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& m : g.members) {
      sum += m.reward;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::size_t RolloutBuffer::trajectory_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& row, bool timing) {
  out << row.run_id << ',' << row.estimator << ',' << row.k << ',' << row.seed << ',' << row.epoch
      << ',' << fmt(row.mean_reward) << ',' << fmt(row.surrogate_value) << ','
      << fmt(row.grad_norm) << ',' << fmt(row.clip_active_fraction) << ','
      << fmt(timing ? row.wallclock_s : 0.0) << '\n';
}

TrainerState::TrainerState(DiffusionPolicy p, const TrainConfig& config)
    : policy(std::move(p)),
      optimizer(policy.spec().param_count(),
                AdamWConfig{.lr = config.lr, .weight_decay = config.weight_decay}),
      baselines(config.num_contexts, config.baseline_decay) {}

RolloutBuffer collect_rollouts(const DiffusionPolicy& policy, const TrainConfig& config,
                               const RewardFn& reward, std::uint64_t stream_root, Execution exec) {
  const std::size_t C = policy.num_contexts();
  std::vector<Context> prompts;
  for (std::size_t c = 0; c < C; ++c) prompts.push_back(make_context(c, C));

  std::vector<Context> contexts;
  contexts.reserve(config.groups_per_epoch * config.k);
  for (std::size_t g = 0; g < config.groups_per_epoch; ++g) {
    for (std::size_t m = 0; m < config.k; ++m) contexts.push_back(prompts[g % C]);
  }
  auto trajs = sample_batch(policy, contexts, reward, config.seed, stream_root, exec);

  RolloutBuffer buffer;
  buffer.sampler_version = policy.version();
  buffer.groups.resize(config.groups_per_epoch);
  for (std::size_t g = 0; g < config.groups_per_epoch; ++g) {
    auto& group = buffer.groups[g];
    group.context = prompts[g % C];
    group.members.reserve(config.k);
    for (std::size_t m = 0; m < config.k; ++m) {
      group.members.push_back(std::move(trajs[g * config.k + m]));
    }
  }
  return buffer;
}

MetricsRow train_epoch(TrainerState& state, RolloutBuffer& buffer, const TrainConfig& config,
                       std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  const EstimatorKind kind = config.estimator;
  const std::size_t passes = config.effective_inner_epochs();
  if (buffer.passes_used >= passes) {
    throw ContractError("rollout buffer already used for " + std::to_string(buffer.passes_used) +
                        " passes");
  }

  MetricsRow row;
  row.estimator = std::string(to_string(kind));
  row.k = config.k;
  row.seed = config.seed;
  row.epoch = epoch;
  row.mean_reward = buffer.mean_reward();

  double surrogate = 0.0, norm = 0.0, clip_frac = 0.0;
  std::size_t updates = 0;
  auto record = [&](const GradientEstimate& est, double pre_clip_norm) {
    surrogate += est.surrogate_value;
    norm += pre_clip_norm;
    clip_frac += est.clip_active_fraction;
    ++updates;
  };

  if (is_on_policy(kind)) {
    if (buffer.sampler_version != state.policy.version()) {
      throw StalenessError(std::string(to_string(kind)) + " cannot reuse a buffer from snapshot " +
                           std::to_string(buffer.sampler_version));
    }
    GradientEstimate est;
    if (kind == EstimatorKind::reinforce) {
      est = reinforce_grad(state.policy, copy_members(buffer.groups));
    } else if (kind == EstimatorKind::reinforce_bc) {
      est = reinforce_bc_grad(state.policy, buffer.groups);
    } else {
      est = rloo_grad(state.policy, buffer.groups);
    }
    est.kind = kind;
    est.k_used = config.k;
    const double n = apply_update(state, est.grad, config.max_grad_norm);
    record(est, n);
    buffer.passes_used = 1;
  } else {
    const ClipConfig clip = config.clip();
    // PPO baselines are fixed per buffer, computed once when it is first touched.
    std::vector<double> baselines;
    if (kind == EstimatorKind::ppo_clip) baselines = state.baselines.update(buffer.groups);
    std::vector<std::size_t> offsets(buffer.groups.size() + 1, 0);
    for (std::size_t g = 0; g < buffer.groups.size(); ++g) {
      offsets[g + 1] = offsets[g] + buffer.groups[g].size();
    }

    std::vector<std::size_t> order(buffer.groups.size());
    for (std::size_t pass = buffer.passes_used; pass < passes; ++pass) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng = make_stream(config.seed, root(kShuffleTag, epoch, pass));
      std::shuffle(order.begin(), order.end(), rng);

      for (std::size_t begin = 0; begin < order.size(); begin += config.minibatch_groups) {
        const std::size_t end = std::min(order.size(), begin + config.minibatch_groups);
        GradientEstimate est;
        if (kind == EstimatorKind::ppo_clip) {
          std::vector<const Trajectory*> trajs;
          std::vector<double> b;
          for (std::size_t i = begin; i < end; ++i) {
            const auto& g = buffer.groups[order[i]];
            for (std::size_t m = 0; m < g.size(); ++m) {
              trajs.push_back(&g.members[m]);
              b.push_back(baselines[offsets[order[i]] + m]);
            }
          }
          est = ppo_surrogate_grad(state.policy, trajs, b, clip);
        } else {
          std::vector<TrajectoryGroup> mb;
          mb.reserve(end - begin);
          for (std::size_t i = begin; i < end; ++i) mb.push_back(buffer.groups[order[i]]);
          est = loop_surrogate_grad(state.policy, mb, clip);
        }
        const double n = apply_update(state, est.grad, config.max_grad_norm);
        record(est, n);
      }
      ++buffer.passes_used;
    }
  }

  const double u = static_cast<double>(std::max<std::size_t>(updates, 1));
  row.surrogate_value = surrogate / u;
  row.grad_norm = norm / u;
  row.clip_active_fraction = clip_frac / u;
  row.wallclock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

double validation_reward(const DiffusionPolicy& policy, const TrainConfig& config,
                         const RewardFn& reward) {
  std::vector<Context> contexts;
  for (std::size_t c = 0; c < policy.num_contexts(); ++c) {
    for (std::size_t i = 0; i < config.validation_samples; ++i) {
      contexts.push_back(make_context(c, policy.num_contexts()));
    }
  }
  const auto trajs = sample_batch(policy, contexts, reward, config.seed, root(kValidationTag, 0));
  double sum = 0.0;
  for (const auto& t : trajs) sum += t.reward;
  return sum / static_cast<double>(trajs.size());
}

PretrainResult pretrain_base(const TrainConfig& config) {
  MixtureSpec mix;
  mix.label_fidelity = config.label_fidelity;
  auto dataset = make_mixture_dataset(config.dataset_size, mix, config.pretrain_seed);
  DiffusionPolicy policy(config.policy_config());
  PretrainConfig pc;
  pc.steps = config.pretrain_steps;
  pc.batch_size = config.pretrain_batch;
  pc.lr = config.pretrain_lr;
  pc.seed = config.pretrain_seed;
  auto losses = pretrain_ddpm(policy, dataset, pc);
  return {std::move(policy), std::move(dataset), std::move(losses)};
}

std::vector<double> mode_occupancy(const DiffusionPolicy& policy,
                                   std::span<const std::vector<double>> centers,
                                   std::size_t samples, double radius, std::uint64_t seed) {
  if (samples == 0) throw ConfigError("mode_occupancy: samples must be positive");
  std::vector<Context> contexts;
  contexts.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    contexts.push_back(make_context(i % policy.num_contexts(), policy.num_contexts()));
  }
  const RewardFn none = [](std::span<const double>, const Context&) { return 0.0; };
  const auto trajs = sample_batch(policy, contexts, none, seed, root(kOccupancyTag, 0));
  std::vector<double> fraction(centers.size(), 0.0);
  for (const auto& t : trajs) {
    const auto x0 = t.final_state();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (centers[c].size() != x0.size()) throw ShapeError("mode_occupancy: center dimension");
      double sq = 0.0;
      for (std::size_t d = 0; d < x0.size(); ++d) sq += (x0[d] - centers[c][d]) * (x0[d] - centers[c][d]);
      if (sq <= radius * radius) fraction[c] += 1.0;
    }
  }
  for (auto& f : fraction) f /= static_cast<double>(samples);
  return fraction;
}

double loglog_slope(std::span<const std::size_t> ks, std::span<const double> traces) {
  if (ks.size() != traces.size() || ks.size() < 2) throw ConfigError("slope: need >= 2 points");
  const double n = static_cast<double>(ks.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    mx += std::log(static_cast<double>(ks[i]));
    my += std::log(traces[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double dx = std::log(static_cast<double>(ks[i])) - mx;
    sxy += dx * (std::log(traces[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ConfigError("slope: k values must not all be equal");
  return sxy / sxx;
}

VarianceReport variance_probe(const DiffusionPolicy& policy, const TrainConfig& config,
                              const RewardFn& reward, std::size_t num_resamples,
                              std::span<const std::size_t> ks) {
  if (num_resamples < 100) throw ConfigError("variance_probe: need at least 100 resamples");
  const std::size_t P = policy.spec().param_count();
  const ClipConfig clip = config.clip();
  VarianceReport report;
  std::vector<double> mean(P), m2(P);

  for (std::size_t kk : ks) {
    TrainConfig probe = config;
    probe.k = kk;
    probe.groups_per_epoch = config.probe_groups;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
    double norm_sum = 0.0;

    for (std::size_t r = 0; r < num_resamples; ++r) {
      const auto buffer = collect_rollouts(policy, probe, reward, root(kProbeTag, kk, r));
      GradientEstimate est;
      if (kk == 1) {
        const auto trajs = members_of(buffer.groups);
        const std::vector<double> zero(trajs.size(), 0.0);
        est = ppo_surrogate_grad(policy, trajs, zero, clip);
      } else {
        est = loop_surrogate_grad(policy, buffer.groups, clip);
      }
      norm_sum += l2_norm(est.grad);
      // Welford update per coordinate.
      const double n = static_cast<double>(r + 1);
      for (std::size_t p = 0; p < P; ++p) {
        const double delta = est.grad[p] - mean[p];
        mean[p] += delta / n;
        m2[p] += delta * (est.grad[p] - mean[p]);
      }
    }
    double trace = 0.0;
    for (double v : m2) trace += v / static_cast<double>(num_resamples - 1);
    report.rows.push_back({kk, num_resamples, trace, norm_sum / static_cast<double>(num_resamples)});
  }

  if (report.rows.size() >= 2) {
    std::vector<double> traces;
    for (const auto& row : report.rows) traces.push_back(row.cov_trace);
    bool positive = std::all_of(traces.begin(), traces.end(), [](double t) { return t > 0.0; });
    report.slope_loglog = positive ? loglog_slope(ks, traces) : 0.0;
  }
  return report;
}

void write_variance_csv(std::ostream& out, const VarianceReport& report) {
  out << "k,resamples,cov_trace,slope_loglog\n";
  std::size_t total = 0;
  for (const auto& row : report.rows) {
    out << row.k << ',' << row.resamples << ',' << fmt(row.cov_trace) << ",\n";
    total += row.resamples;
  }
  out << "sweep," << total << ",," << fmt(report.slope_loglog) << '\n';
}

std::string default_run_id(const TrainConfig& config) {
  return std::string(to_string(config.estimator)) + "_k" + std::to_string(config.k) + "_s" +
         std::to_string(config.seed);
}

ExperimentResult run_experiment(const TrainConfig& config, const RunOptions& options,
                                const DiffusionPolicy* base) {
  config.validate();
  const RewardFn reward = reward_registry(config.reward_name);
  std::optional<DiffusionPolicy> pretrained;
  if (base == nullptr) {
    pretrained.emplace(pretrain_base(config).policy);
    base = &*pretrained;
  }
  if (base->steps() != config.steps || base->num_contexts() != config.num_contexts) {
    throw ConfigError("run_experiment: base policy does not match the configured T / contexts");
  }

  std::ofstream csv;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto path = *options.out_dir / "metrics.csv";
    csv.open(path, std::ios::binary);
    if (!csv) throw IoError("cannot open " + path.string() + " for writing");
    write_metrics_header(csv);
  }

  TrainerState state(*base, config);
  const std::string run_id = options.run_id.empty() ? default_run_id(config) : options.run_id;
  ExperimentResult result{{}, *base, 0.0, 0.0};
  result.base_validation = validation_reward(state.policy, config, reward);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto buffer = collect_rollouts(state.policy, config, reward, root(kCollectTag, epoch));
    MetricsRow row = train_epoch(state, buffer, config, epoch);
    row.run_id = run_id;
    if (csv.is_open()) write_metrics_row(csv, row, options.timing);
    result.rows.push_back(std::move(row));
  }

  result.final_validation = validation_reward(state.policy, config, reward);
  result.final_policy = state.policy;
  if (options.out_dir) {
    if (!csv) throw IoError("write failed: " + (*options.out_dir / "metrics.csv").string());
    save_checkpoint(*options.out_dir / "checkpoint.txt", state.policy.spec(),
                    state.policy.params().values());
  }
  return result;
}

std::vector<CompareEntry> compare_entries(const TrainConfig& config) {
  std::vector<CompareEntry> entries = {{EstimatorKind::reinforce, 1},
                                       {EstimatorKind::reinforce_bc, config.bc_k},
                                       {EstimatorKind::ppo_clip, 1}};
  for (std::size_t kk : config.compare_ks) entries.push_back({EstimatorKind::loop, kk});
  return entries;
}

CompareResult run_compare(const TrainConfig& config, const DiffusionPolicy& base) {
  CompareResult result;
  for (const auto& entry : compare_entries(config)) {
    for (std::size_t s = 0; s < config.seeds; ++s) {
      TrainConfig run = config;
      run.estimator = entry.estimator;
      run.k = entry.k;
      run.seed = config.seed + s;
      const std::string id = default_run_id(run);
      auto r = run_experiment(run, RunOptions{id, std::nullopt, true}, &base);
      result.rows.insert(result.rows.end(), r.rows.begin(), r.rows.end());
      result.runs.push_back({id, entry.estimator, entry.k, run.seed, r.base_validation,
                             r.final_validation});
    }
  }
  return result;
}

}  // namespace looprl
