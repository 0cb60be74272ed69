#include "looprl/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "looprl/error.hpp"
#include "looprl/rng.hpp"

namespace looprl {

std::vector<LabeledPoint> make_mixture_dataset(std::size_t n, const MixtureSpec& spec,
                                               std::uint64_t seed) {
  if (spec.centers.empty()) throw ConfigError("mixture: no centers");
  if (!(spec.stddev > 0.0)) throw ConfigError("mixture: stddev must be positive");
  if (!(spec.label_fidelity >= 0.0 && spec.label_fidelity <= 1.0)) {
    throw ConfigError("mixture: label_fidelity must lie in [0, 1]");
  }
  Rng rng = make_stream(seed, 0xda7a);
  const std::size_t c = spec.centers.size();
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;

  std::vector<LabeledPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t mode = pick(rng);
    LabeledPoint p;
    if (c == 1 || unit(rng) < spec.label_fidelity) {
      p.context = mode;
    } else {
      std::uniform_int_distribution<std::size_t> other(0, c - 2);
      const std::size_t o = other(rng);
      p.context = o < mode ? o : o + 1;
    }
    for (double m : spec.centers[mode]) p.x.push_back(m + spec.stddev * normal(rng));
    out.push_back(std::move(p));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const LabeledPoint> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (const auto& p : data) {
    out << p.context;
    for (double v : p.x) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out.put(' ');
      out.write(buf, ptr - buf);
    }
    out.put('\n');
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<LabeledPoint> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<LabeledPoint> data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    LabeledPoint p;
    double x = 0.0, y = 0.0;
    if (!(ls >> p.context >> x >> y)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 'context_id x y'");
    }
    p.x = {x, y};
    data.push_back(std::move(p));
  }
  return data;
}

}  // namespace looprl
