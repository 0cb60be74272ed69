#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "looprl/diffusion.hpp"

namespace looprl {

// Isotropic Gaussian mixture over 2-D points, one component per prompt.
//
// label_fidelity is the probability that a sample is labeled with its own
// component's context; otherwise the label is drawn uniformly from the other
// contexts. At 1/C (the default for C = 4) labels carry no information and the
// pretrained model is symmetric across prompts.
struct MixtureSpec {
  std::vector<std::vector<double>> centers = {{1.5, 1.5}, {-1.5, 1.5}, {-1.5, -1.5}, {1.5, -1.5}};
  double stddev = 0.3;
  double label_fidelity = 0.25;
};

std::vector<LabeledPoint> make_mixture_dataset(std::size_t n, const MixtureSpec& spec,
                                               std::uint64_t seed);

// Plain text, one sample per line: "context_id x y".
void write_dataset(const std::filesystem::path& path, std::span<const LabeledPoint> data);
std::vector<LabeledPoint> read_dataset(const std::filesystem::path& path);

}  // namespace looprl
