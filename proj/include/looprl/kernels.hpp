#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "looprl/diffusion.hpp"

namespace looprl {

// Every data-parallel kernel exists twice: a plain serial reference and an
// OpenMP version. The parallel versions are deterministic independent of the
// thread count: work items own their random streams and reductions run in a
// fixed index order.
enum class Execution { serial, parallel };

Execution default_execution();
void set_default_execution(Execution exec);

// Called once per trajectory with its step log-probs under the current
// parameters; must fill `weights` (length T). Runs concurrently for distinct
// indices under Execution::parallel, so it may only write per-index state.
using StepWeightFn = std::function<void(std::size_t index, std::span<const double> current_logps,
                                        std::span<double> weights)>;

// sum_i sum_t w_{i,t} * d/dtheta log p_theta(step t of trajectory i)
std::vector<double> weighted_score_serial(const DiffusionPolicy& policy,
                                          std::span<const Trajectory* const> trajs,
                                          const StepWeightFn& weight_fn);
std::vector<double> weighted_score_parallel(const DiffusionPolicy& policy,
                                            std::span<const Trajectory* const> trajs,
                                            const StepWeightFn& weight_fn);
std::vector<double> weighted_score(const DiffusionPolicy& policy,
                                   std::span<const Trajectory* const> trajs,
                                   const StepWeightFn& weight_fn,
                                   Execution exec = default_execution());

// Trajectory i is rolled out for contexts[i] with stream make_stream(seed, stream_base + i).
std::vector<Trajectory> sample_batch_serial(const DiffusionPolicy& policy,
                                            std::span<const Context> contexts,
                                            const RewardFn& reward, std::uint64_t seed,
                                            std::uint64_t stream_base);
std::vector<Trajectory> sample_batch_parallel(const DiffusionPolicy& policy,
                                              std::span<const Context> contexts,
                                              const RewardFn& reward, std::uint64_t seed,
                                              std::uint64_t stream_base);
std::vector<Trajectory> sample_batch(const DiffusionPolicy& policy,
                                     std::span<const Context> contexts, const RewardFn& reward,
                                     std::uint64_t seed, std::uint64_t stream_base,
                                     Execution exec = default_execution());

}  // namespace looprl
