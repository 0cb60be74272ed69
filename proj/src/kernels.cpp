#include "looprl/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>

#include <omp.h>

#include "looprl/error.hpp"

namespace looprl {
namespace {

std::atomic<Execution> g_default_execution{Execution::parallel};

// Trajectories per reduction chunk. Fixed so the summation order never
// depends on the number of threads.
constexpr std::size_t kChunk = 32;

// Collects the first exception thrown inside a parallel region and rethrows
// it on the calling thread.
class ExceptionSlot {
 public:
  template <typename F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

}  // namespace

Execution default_execution() { return g_default_execution.load(); }
void set_default_execution(Execution exec) { g_default_execution.store(exec); }

std::vector<double> weighted_score_serial(const DiffusionPolicy& policy,
                                          std::span<const Trajectory* const> trajs,
                                          const StepWeightFn& weight_fn) {
  // Each trajectory's contribution is formed on its own and then added, the
  // same association the parallel path uses.
  const std::size_t P = policy.spec().param_count();
  std::vector<double> grad(P, 0.0);
  std::vector<double> single(P);
  ScoreWorkspace ws;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    std::fill(single.begin(), single.end(), 0.0);
    record_steps(policy, *trajs[i], ws);
    weight_fn(i, ws.logps, ws.weights);
    accumulate_weighted_score(policy, *trajs[i], ws, single);
    for (std::size_t p = 0; p < P; ++p) grad[p] += single[p];
  }
  return grad;
}

std::vector<double> weighted_score_parallel(const DiffusionPolicy& policy,
                                            std::span<const Trajectory* const> trajs,
                                            const StepWeightFn& weight_fn) {
  const std::size_t P = policy.spec().param_count();
  std::vector<double> grad(P, 0.0);
  std::vector<double> partial(kChunk * P);
  std::vector<ScoreWorkspace> workspaces(static_cast<std::size_t>(omp_get_max_threads()));
  ExceptionSlot errors;

  for (std::size_t begin = 0; begin < trajs.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, trajs.size() - begin);
    std::fill(partial.begin(), partial.begin() + static_cast<std::ptrdiff_t>(count * P), 0.0);

#pragma omp parallel for schedule(static)
    for (std::size_t j = 0; j < count; ++j) {
      errors.run([&] {
        auto& ws = workspaces[static_cast<std::size_t>(omp_get_thread_num())];
        const Trajectory& traj = *trajs[begin + j];
        record_steps(policy, traj, ws);
        weight_fn(begin + j, ws.logps, ws.weights);
        accumulate_weighted_score(policy, traj, ws,
                                  std::span<double>(partial).subspan(j * P, P));
      });
    }
    errors.rethrow();

    for (std::size_t j = 0; j < count; ++j) {
      const double* src = partial.data() + j * P;
      for (std::size_t p = 0; p < P; ++p) grad[p] += src[p];
    }
  }
  return grad;
}

std::vector<double> weighted_score(const DiffusionPolicy& policy,
                                   std::span<const Trajectory* const> trajs,
                                   const StepWeightFn& weight_fn, Execution exec) {
  return exec == Execution::serial ? weighted_score_serial(policy, trajs, weight_fn)
                                   : weighted_score_parallel(policy, trajs, weight_fn);
}

std::vector<Trajectory> sample_batch_serial(const DiffusionPolicy& policy,
                                            std::span<const Context> contexts,
                                            const RewardFn& reward, std::uint64_t seed,
                                            std::uint64_t stream_base) {
  std::vector<Trajectory> out;
  out.reserve(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    Rng rng = make_stream(seed, stream_base + i);
    out.push_back(rollout(policy, contexts[i], reward, rng));
  }
  return out;
}

std::vector<Trajectory> sample_batch_parallel(const DiffusionPolicy& policy,
                                              std::span<const Context> contexts,
                                              const RewardFn& reward, std::uint64_t seed,
                                              std::uint64_t stream_base) {
  std::vector<Trajectory> out(contexts.size());
  ExceptionSlot errors;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    errors.run([&] {
      Rng rng = make_stream(seed, stream_base + i);
      out[i] = rollout(policy, contexts[i], reward, rng);
    });
  }
  errors.rethrow();
  return out;
}

std::vector<Trajectory> sample_batch(const DiffusionPolicy& policy,
                                     std::span<const Context> contexts, const RewardFn& reward,
                                     std::uint64_t seed, std::uint64_t stream_base,
                                     Execution exec) {
  return exec == Execution::serial
             ? sample_batch_serial(policy, contexts, reward, seed, stream_base)
             : sample_batch_parallel(policy, contexts, reward, seed, stream_base);
}

}  // namespace looprl
