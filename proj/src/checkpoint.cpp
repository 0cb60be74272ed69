#include "looprl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "looprl/error.hpp"

namespace looprl {
namespace {

std::size_t parse_count(std::string_view text, std::string_view what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError("checkpoint: malformed " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

std::string_view field(std::string_view token, std::string_view key) {
  if (token.substr(0, key.size()) != key) {
    throw IoError("checkpoint: expected header field '" + std::string(key) + "'");
  }
  return token.substr(key.size());
}

}  // namespace

void write_checkpoint(std::ostream& out, const MlpSpec& spec, std::span<const double> values) {
  if (values.size() != spec.param_count()) throw ShapeError("checkpoint: value count mismatch");
  out << "looprl-mlp v1 input=" << spec.input_dim() << " hidden=";
  for (std::size_t i = 0; i < spec.hidden_dims().size(); ++i) {
    if (i) out << ',';
    out << spec.hidden_dims()[i];
  }
  out << " output=" << spec.output_dim() << " activation=tanh count=" << values.size() << '\n';
  char buf[64];
  for (double v : values) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, ptr - buf);
    out.put('\n');
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("checkpoint: missing header line");
  std::istringstream hs(header);
  std::string magic, version, input, hidden, output, activation, count;
  hs >> magic >> version >> input >> hidden >> output >> activation >> count;
  if (magic != "looprl-mlp" || version != "v1") throw IoError("checkpoint: unrecognized header");

  std::vector<std::size_t> hidden_dims;
  std::string_view hidden_list = field(hidden, "hidden=");
  while (!hidden_list.empty()) {
    const auto comma = hidden_list.find(',');
    hidden_dims.push_back(parse_count(hidden_list.substr(0, comma), "hidden dim"));
    if (comma == std::string_view::npos) break;
    hidden_list.remove_prefix(comma + 1);
  }
  if (field(activation, "activation=") != "tanh") throw IoError("checkpoint: unsupported activation");

  MlpSpec spec(parse_count(field(input, "input="), "input dim"), hidden_dims,
               parse_count(field(output, "output="), "output dim"));
  const std::size_t n = parse_count(field(count, "count="), "count");
  if (n != spec.param_count()) throw IoError("checkpoint: count does not match the network shape");

  std::vector<double> values;
  values.reserve(n);
  std::string line;
  while (values.size() < n && std::getline(in, line)) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw IoError("checkpoint: malformed value on line " + std::to_string(values.size() + 2));
    }
    values.push_back(v);
  }
  if (values.size() != n) throw IoError("checkpoint: truncated value list");
  return {std::move(spec), std::move(values)};
}

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec,
                     std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, spec, values);
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace looprl
