#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mfq/numeric/format.hpp"
#include "mfq/nn/ops.hpp"
#include "mfq/nn/tape.hpp"

namespace mfq::nn {

enum class LayerKind { Conv, Dense, BatchNorm, ReLU, MaxPool, Upsample, Concat, Quantize };

const char* layer_kind_name(LayerKind k);

/// Weight and activation quantizers of one quantizable layer.
///
/// Observed maxima are filled during calibration; gradients of the two
/// exponent biases accumulate in the g_ fields during backward.
struct QuantAttachment {
  num::QuantizerState weight_q;
  num::QuantizerState activation_q;
  bool enabled = false;
  bool quantize_activation = true;

  double g_weight_E0 = 0.0;
  double g_activation_E0 = 0.0;
  double observed_weight_max = 0.0;
  double observed_activation_max = 0.0;
};

/// One node of the layer DAG. Inputs index earlier layers; -1 is the graph input.
struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::vector<int> inputs;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int weight = -1;  ///< parameter index (conv/dense weight, bn gamma)
  int bias = -1;    ///< parameter index (conv/dense bias, bn beta)
  int bn = -1;      ///< batch-norm state index
  int attachment = -1;  ///< conv/dense: weight quantizer; quantize: activation quantizer
};

struct InputSpec {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct ForwardOptions {
  bool training = true;
  bool track_max = false;  ///< update observed maxima in the attachments
  bool ste_clip_zero = false;
};

/// Layer DAG with parameters, batch-norm state and quantizer attachments.
class ModelGraph {
 public:
  InputSpec input;
  std::string spec;  ///< builder description, e.g. "toy-seg:c=3,w=8"
  std::vector<Layer> layers;
  std::vector<Parameter> params;
  std::vector<BatchNormState> bn_states;
  std::vector<QuantAttachment> attachments;

  int add_conv(int input, int in_ch, int out_ch, int kernel, const std::string& name, bool quantizable = true);
  int add_dense(int input, int in_features, int out_features, const std::string& name, bool quantizable = true);
  int add_batchnorm(int input, int channels, const std::string& name);
  int add_simple(LayerKind kind, std::vector<int> inputs, const std::string& name);
  /// Activation quantizer tied to the attachment of layer `owner`.
  int add_activation_quantizer(int input, int owner, const std::string& name);

  int output() const { return static_cast<int>(layers.size()) - 1; }

  /// Kaiming-normal conv/dense weights, zero biases, unit BN scale.
  void init_parameters(std::uint64_t seed);

  std::size_t parameter_count() const;

  /// Records the full forward pass; returns the output node id.
  Tape::Id forward(Tape& tape, const Tensor& x, const ForwardOptions& opt);

  /// Records one layer given the ids of its inputs.
  Tape::Id forward_layer(int index, std::span<const Tape::Id> inputs, Tape& tape, const ForwardOptions& opt);

  /// Output shape of every layer for an input of shape (N, C, H, W); throws ShapeError.
  std::vector<Shape> infer_shapes(const Shape& in) const;

  void zero_grad();
  void set_quantization(bool enabled);

  /// Sets every weight and activation quantizer to format/bias.
  void configure_quantizers(const num::MinifloatFormat& weights, const num::MinifloatFormat& activations,
                            double weight_E0, double activation_E0, bool learnable);
};

}  // namespace mfq::nn
