#pragma once

#include "mfq/numeric/format.hpp"
#include "mfq/nn/tape.hpp"

namespace mfq::nn {

/// Running statistics of one batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

namespace ops {

using Id = Tape::Id;

/// Stride-1 convolution, weight (O, C, k, k), bias (O), zero padding `pad`.
Id conv2d(Tape& t, Id x, Id weight, Id bias, int pad);

/// y = x W^T + b; x of rank >= 2 is flattened to (N, F).
Id dense(Tape& t, Id x, Id weight, Id bias);

/// Per-channel batch normalization. Training mode uses batch statistics
/// and updates `state`; eval mode uses the running statistics.
Id batchnorm(Tape& t, Id x, Id gamma, Id beta, BatchNormState& state, bool training);

Id relu(Tape& t, Id x);

/// 2x2 max pooling, stride 2; ties resolve to the first element in row-major order.
Id maxpool2(Tape& t, Id x);

/// Bilinear x2 upsampling with half-pixel centers (align_corners = false).
Id upsample2(Tape& t, Id x);

/// Channel concatenation of two NCHW tensors.
Id concat(Tape& t, Id a, Id b);

/// Minifloat quantizer node with straight-through backward.
///
/// When `bias_grad` is non-null the saturation gradient w.r.t. E0 is added to it.
Id quantize(Tape& t, Id x, const num::QuantizerState& q, double* bias_grad, bool ste_clip_zero,
            std::string label = "quantize");

}  // namespace ops
}  // namespace mfq::nn
