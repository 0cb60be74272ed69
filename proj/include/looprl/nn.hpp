#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace looprl {

enum class Activation { tanh };

// Dense network shape: input -> hidden... (tanh) -> output (linear).
//
// Parameters are stored layer-major. Within a layer the weight matrix comes
// first in row-major order (rows = outputs, cols = inputs), followed by the
// bias vector.
class MlpSpec {
 public:
  MlpSpec(std::size_t input_dim, std::vector<std::size_t> hidden_dims, std::size_t output_dim,
          Activation activation = Activation::tanh);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<std::size_t>& hidden_dims() const { return hidden_dims_; }
  Activation activation() const { return activation_; }

  std::size_t num_layers() const { return hidden_dims_.size() + 1; }
  std::size_t layer_inputs(std::size_t layer) const;
  std::size_t layer_outputs(std::size_t layer) const;
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;
  std::size_t param_count() const { return offsets_.back(); }
  std::size_t widest_layer() const;

  // Flat index of weight (row, col) in `layer`; col == layer_inputs(layer) addresses the bias.
  std::size_t index(std::size_t layer, std::size_t row, std::size_t col) const;

  // "7-32-32-2" style shape string.
  std::string shape_string() const;

  friend bool operator==(const MlpSpec& a, const MlpSpec& b) {
    return a.input_dim_ == b.input_dim_ && a.hidden_dims_ == b.hidden_dims_ &&
           a.output_dim_ == b.output_dim_ && a.activation_ == b.activation_;
  }

 private:
  std::size_t input_dim_;
  std::vector<std::size_t> hidden_dims_;
  std::size_t output_dim_;
  Activation activation_;
  std::vector<std::size_t> offsets_;  // num_layers + 1 entries
};

// Flat parameter storage. Every mutable access bumps the version so tapes
// recorded against older values can be detected.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const MlpSpec& spec) : values_(spec.param_count(), 0.0) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() {
    ++version_;
    return values_;
  }
  std::uint64_t version() const { return version_; }

 private:
  std::vector<double> values_;
  std::uint64_t version_ = 0;
};

struct LayerParams {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;  // rows * cols, row-major
  std::vector<double> bias;     // rows
};

std::vector<LayerParams> unflatten(const MlpSpec& spec, std::span<const double> values);
std::vector<double> flatten(const MlpSpec& spec, std::span<const LayerParams> layers);

// Glorot-uniform weights, zero biases.
void init_glorot(const MlpSpec& spec, ParamVector& params, std::uint64_t seed);

// Activation record of one forward pass. Reusable across calls: buffers are
// resized in place.
class Tape {
 public:
  bool recorded() const { return owner_ != nullptr; }

 private:
  friend void mlp_forward_into(const MlpSpec&, const ParamVector&, std::span<const double>, Tape&,
                               std::span<double>);
  friend void mlp_backward_into(const MlpSpec&, const ParamVector&, const Tape&,
                                std::span<const double>, std::span<double>, std::span<double>);

  // activations_[0] is the input; activations_[l + 1] is the output of layer l
  // (post-tanh for hidden layers).
  std::vector<std::vector<double>> activations_;
  mutable std::vector<double> delta_;
  mutable std::vector<double> delta_prev_;
  const ParamVector* owner_ = nullptr;
  std::uint64_t owner_version_ = 0;
  std::size_t param_count_ = 0;
};

// Writes the network output into `output` and records activations on `tape`.
void mlp_forward_into(const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
                      Tape& tape, std::span<double> output);

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> input, Tape& tape);

// Accumulates d<output, cotangent>/d(params) into `param_grad` (+=). When
// `input_cotangent` is non-empty it receives d<output, cotangent>/d(input)
// (overwritten, not accumulated).
void mlp_backward_into(const MlpSpec& spec, const ParamVector& params, const Tape& tape,
                       std::span<const double> cotangent, std::span<double> param_grad,
                       std::span<double> input_cotangent = {});

struct MlpGradient {
  std::vector<double> params;
  std::vector<double> input;
};

MlpGradient mlp_backward(const MlpSpec& spec, const ParamVector& params, const Tape& tape,
                         std::span<const double> cotangent);

}  // namespace looprl
