#include "looprl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "looprl/error.hpp"
#include "looprl/rng.hpp"

namespace looprl {

MlpSpec::MlpSpec(std::size_t input_dim, std::vector<std::size_t> hidden_dims,
                 std::size_t output_dim, Activation activation)
    : input_dim_(input_dim),
      hidden_dims_(std::move(hidden_dims)),
      output_dim_(output_dim),
      activation_(activation) {
  if (input_dim_ == 0 || output_dim_ == 0) {
    throw ConfigError("mlp: input and output dims must be >= 1");
  }
  for (std::size_t h : hidden_dims_) {
    if (h == 0) throw ConfigError("mlp: hidden dims must be >= 1");
  }
  offsets_.reserve(num_layers() + 1);
  offsets_.push_back(0);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    offsets_.push_back(offsets_.back() + layer_outputs(l) * (layer_inputs(l) + 1));
  }
}

std::size_t MlpSpec::layer_inputs(std::size_t layer) const {
  return layer == 0 ? input_dim_ : hidden_dims_[layer - 1];
}

std::size_t MlpSpec::layer_outputs(std::size_t layer) const {
  return layer == hidden_dims_.size() ? output_dim_ : hidden_dims_[layer];
}

std::size_t MlpSpec::bias_offset(std::size_t layer) const {
  return offsets_[layer] + layer_outputs(layer) * layer_inputs(layer);
}

std::size_t MlpSpec::widest_layer() const {
  std::size_t w = std::max(input_dim_, output_dim_);
  for (std::size_t h : hidden_dims_) w = std::max(w, h);
  return w;
}

std::size_t MlpSpec::index(std::size_t layer, std::size_t row, std::size_t col) const {
  if (layer >= num_layers() || row >= layer_outputs(layer) || col > layer_inputs(layer)) {
    throw IndexError("mlp: parameter index out of range");
  }
  if (col == layer_inputs(layer)) return bias_offset(layer) + row;
  return offsets_[layer] + row * layer_inputs(layer) + col;
}

std::string MlpSpec::shape_string() const {
  std::ostringstream out;
  out << input_dim_;
  for (std::size_t h : hidden_dims_) out << '-' << h;
  out << '-' << output_dim_;
  return out.str();
}

std::vector<LayerParams> unflatten(const MlpSpec& spec, std::span<const double> values) {
  if (values.size() != spec.param_count()) {
    throw ShapeError("unflatten: expected " + std::to_string(spec.param_count()) +
                     " values, got " + std::to_string(values.size()));
  }
  std::vector<LayerParams> layers(spec.num_layers());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto& layer = layers[l];
    layer.rows = spec.layer_outputs(l);
    layer.cols = spec.layer_inputs(l);
    const auto w = values.subspan(spec.weight_offset(l), layer.rows * layer.cols);
    const auto b = values.subspan(spec.bias_offset(l), layer.rows);
    layer.weights.assign(w.begin(), w.end());
    layer.bias.assign(b.begin(), b.end());
  }
  return layers;
}

std::vector<double> flatten(const MlpSpec& spec, std::span<const LayerParams> layers) {
  if (layers.size() != spec.num_layers()) throw ShapeError("flatten: layer count mismatch");
  std::vector<double> values;
  values.reserve(spec.param_count());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.rows != spec.layer_outputs(l) || layer.cols != spec.layer_inputs(l) ||
        layer.weights.size() != layer.rows * layer.cols || layer.bias.size() != layer.rows) {
      throw ShapeError("flatten: layer " + std::to_string(l) + " does not match spec");
    }
    values.insert(values.end(), layer.weights.begin(), layer.weights.end());
    values.insert(values.end(), layer.bias.begin(), layer.bias.end());
  }
  return values;
}

void init_glorot(const MlpSpec& spec, ParamVector& params, std::uint64_t seed) {
  if (params.size() != spec.param_count()) throw ShapeError("init_glorot: size mismatch");
  Rng rng = make_stream(seed, 0x1417);
  auto values = params.mutable_values();
  std::fill(values.begin(), values.end(), 0.0);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_inputs(l);
    const std::size_t fan_out = spec.layer_outputs(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) {
      values[spec.weight_offset(l) + i] = dist(rng);
    }
  }
}

void mlp_forward_into(const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
                      Tape& tape, std::span<double> output) {
  if (input.size() != spec.input_dim()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(input.size()) +
                     " entries, expected " + std::to_string(spec.input_dim()));
  }
  if (output.size() != spec.output_dim()) throw ShapeError("mlp_forward: output size mismatch");
  if (params.size() != spec.param_count()) throw ShapeError("mlp_forward: parameter count mismatch");

  const auto theta = params.values();
  const std::size_t layers = spec.num_layers();
  tape.activations_.resize(layers + 1);
  tape.activations_[0].assign(input.begin(), input.end());

  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t rows = spec.layer_outputs(l);
    const std::size_t cols = spec.layer_inputs(l);
    const double* w = theta.data() + spec.weight_offset(l);
    const double* b = theta.data() + spec.bias_offset(l);
    const double* x = tape.activations_[l].data();
    auto& y = tape.activations_[l + 1];
    y.resize(rows);
    const bool hidden = l + 1 < layers;
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = b[r];
      const double* wr = w + r * cols;
      for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
      y[r] = hidden ? std::tanh(acc) : acc;
    }
  }
  std::copy(tape.activations_[layers].begin(), tape.activations_[layers].end(), output.begin());
  tape.owner_ = &params;
  tape.owner_version_ = params.version();
  tape.param_count_ = params.size();
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input, Tape& tape) {
  std::vector<double> out(spec.output_dim());
  mlp_forward_into(spec, params, input, tape, out);
  return out;
}

void mlp_backward_into(const MlpSpec& spec, const ParamVector& params, const Tape& tape,
                       std::span<const double> cotangent, std::span<double> param_grad,
                       std::span<double> input_cotangent) {
  if (!tape.recorded()) throw TapeError("mlp_backward: tape holds no forward pass");
  if (tape.owner_ != &params || tape.owner_version_ != params.version() ||
      tape.param_count_ != spec.param_count() ||
      tape.activations_.size() != spec.num_layers() + 1) {
    throw TapeError("mlp_backward: tape was recorded against different or modified parameters");
  }
  if (cotangent.size() != spec.output_dim()) throw ShapeError("mlp_backward: cotangent size mismatch");
  if (param_grad.size() != spec.param_count()) throw ShapeError("mlp_backward: gradient size mismatch");
  if (!input_cotangent.empty() && input_cotangent.size() != spec.input_dim()) {
    throw ShapeError("mlp_backward: input cotangent size mismatch");
  }

  const auto theta = params.values();
  auto& delta = tape.delta_;
  auto& delta_prev = tape.delta_prev_;
  delta.assign(cotangent.begin(), cotangent.end());

  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const std::size_t rows = spec.layer_outputs(l);
    const std::size_t cols = spec.layer_inputs(l);
    const double* w = theta.data() + spec.weight_offset(l);
    double* gw = param_grad.data() + spec.weight_offset(l);
    double* gb = param_grad.data() + spec.bias_offset(l);
    const double* x = tape.activations_[l].data();

    for (std::size_t r = 0; r < rows; ++r) {
      const double d = delta[r];
      gb[r] += d;
      double* gwr = gw + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gwr[c] += d * x[c];
    }

    const bool need_prev = l > 0 || !input_cotangent.empty();
    if (!need_prev) break;
    delta_prev.assign(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = delta[r];
      const double* wr = w + r * cols;
      for (std::size_t c = 0; c < cols; ++c) delta_prev[c] += wr[c] * d;
    }
    if (l > 0) {
      // x is the tanh output of the previous layer: d tanh = 1 - y^2.
      for (std::size_t c = 0; c < cols; ++c) delta_prev[c] *= 1.0 - x[c] * x[c];
    } else {
      std::copy(delta_prev.begin(), delta_prev.end(), input_cotangent.begin());
    }
    delta.swap(delta_prev);
  }
}

MlpGradient mlp_backward(const MlpSpec& spec, const ParamVector& params, const Tape& tape,
                         std::span<const double> cotangent) {
  MlpGradient g{std::vector<double>(spec.param_count(), 0.0),
                std::vector<double>(spec.input_dim(), 0.0)};
  mlp_backward_into(spec, params, tape, cotangent, g.params, g.input);
  return g;
}

}  // namespace looprl
