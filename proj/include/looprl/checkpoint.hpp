#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "looprl/nn.hpp"

namespace looprl {

// Text checkpoint:
//
//   looprl-mlp v1 input=<n> hidden=<h1,h2,...> output=<n> activation=tanh count=<P>
//   <value 0>
//   ...
//   <value P-1>
//
// Values use shortest round-trip decimal formatting, so load(save(v)) == v bit for bit.
// An empty hidden list is written as "hidden=".
struct Checkpoint {
  MlpSpec spec;
  std::vector<double> values;
};

void write_checkpoint(std::ostream& out, const MlpSpec& spec, std::span<const double> values);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec,
                     std::span<const double> values);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace looprl
