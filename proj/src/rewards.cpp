#include "looprl/rewards.hpp"

#include <cmath>

#include "looprl/error.hpp"

namespace looprl {

RewardSpec RewardSpec::defaults(RewardKind kind) {
  RewardSpec spec;
  spec.kind = kind;
  spec.mode_centers = {{1.5, 1.5}, {-1.5, 1.5}, {-1.5, -1.5}, {1.5, -1.5}};
  spec.bandwidth = 1.0;
  return spec;
}

void RewardSpec::validate() const {
  if (mode_centers.size() < 2) throw ConfigError("reward: need at least two mode centers");
  if (!(bandwidth > 0.0)) throw ConfigError("reward: bandwidth must be positive");
  for (std::size_t i = 0; i < mode_centers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (mode_centers[i] == mode_centers[j]) throw ConfigError("reward: mode centers must be distinct");
    }
  }
}

double quadrant_reward(std::span<const double> x0, const Context& context) {
  if (x0.size() != 2) throw ShapeError("quadrant_reward: expects a 2-D point");
  if (context.embedding.size() != 4) throw DomainError("quadrant_reward: defined for exactly 4 prompts");
  const double x = x0[0];
  const double y = x0[1];
  switch (context.id) {
    case 0: return (x > 0.0 && y > 0.0) ? 1.0 : 0.0;
    case 1: return (x < 0.0 && y > 0.0) ? 1.0 : 0.0;
    case 2: return (x < 0.0 && y < 0.0) ? 1.0 : 0.0;
    case 3: return (x > 0.0 && y < 0.0) ? 1.0 : 0.0;
    default: throw IndexError("quadrant_reward: context id must be in 0..3");
  }
}

double mode_distance_reward(std::span<const double> x0, const Context& context,
                            const RewardSpec& spec) {
  if (context.id >= spec.mode_centers.size()) throw IndexError("mode_distance_reward: no center for context");
  const auto& center = spec.mode_centers[context.id];
  if (center.size() != x0.size()) throw ShapeError("mode_distance_reward: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0[i] - center[i];
    sq += d * d;
  }
  return std::exp(-sq / (spec.bandwidth * spec.bandwidth));
}

double composite_reward(std::span<const double> x0, const Context& context, const RewardSpec& spec) {
  return 0.5 * quadrant_reward(x0, context) + 0.5 * mode_distance_reward(x0, context, spec);
}

RewardFn make_reward(const RewardSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case RewardKind::quadrant_binding:
      return [](std::span<const double> x0, const Context& c) { return quadrant_reward(x0, c); };
    case RewardKind::mode_distance:
      return [spec](std::span<const double> x0, const Context& c) {
        return mode_distance_reward(x0, c, spec);
      };
    case RewardKind::composite:
      return [spec](std::span<const double> x0, const Context& c) {
        return composite_reward(x0, c, spec);
      };
  }
  throw ConfigError("make_reward: unknown kind");
}

std::vector<std::string> registered_rewards() {
  return {"quadrant_binding", "mode_distance", "composite"};
}

RewardKind parse_reward_kind(std::string_view name) {
  if (name == "quadrant_binding") return RewardKind::quadrant_binding;
  if (name == "mode_distance") return RewardKind::mode_distance;
  if (name == "composite") return RewardKind::composite;
  std::string valid;
  for (const auto& n : registered_rewards()) valid += (valid.empty() ? "" : ", ") + n;
  throw LookupError("unknown reward '" + std::string(name) + "' (valid: " + valid + ")");
}

RewardFn reward_registry(std::string_view name) {
  return make_reward(RewardSpec::defaults(parse_reward_kind(name)));
}

}  // namespace looprl
