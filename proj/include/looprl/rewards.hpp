#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "looprl/diffusion.hpp"

namespace looprl {

enum class RewardKind { quadrant_binding, mode_distance, composite };

struct RewardSpec {
  RewardKind kind = RewardKind::quadrant_binding;
  std::vector<std::vector<double>> mode_centers;  // one per context
  double bandwidth = 1.0;

  // Four centers at (+-1.5, +-1.5) ordered to match the quadrant prompts.
  static RewardSpec defaults(RewardKind kind);
  void validate() const;
};

// Context k prompts quadrant k: 0 (+,+), 1 (-,+), 2 (-,-), 3 (+,-).
// 1 strictly inside the prompted quadrant, 0 otherwise (axes score 0).
double quadrant_reward(std::span<const double> x0, const Context& context);

// exp(-|x0 - center_c|^2 / bandwidth^2)
double mode_distance_reward(std::span<const double> x0, const Context& context,
                            const RewardSpec& spec);

// Mean of the two rewards above; stays in [0, 1].
double composite_reward(std::span<const double> x0, const Context& context, const RewardSpec& spec);

RewardFn make_reward(const RewardSpec& spec);

std::vector<std::string> registered_rewards();
RewardKind parse_reward_kind(std::string_view name);

// Reward with default parameters by registry name. Unknown names throw
// LookupError listing the valid ones.
RewardFn reward_registry(std::string_view name);

}  // namespace looprl
