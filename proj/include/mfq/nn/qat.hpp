#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mfq/numeric/quantize.hpp"
#include "mfq/nn/graph.hpp"
#include "mfq/nn/optim.hpp"

namespace mfq::nn {

/// Inputs plus either dense targets (segmentation) or class labels.
struct Batch {
  Tensor inputs;
  Tensor targets;
  std::vector<int> labels;
};

struct LossResult {
  double value = 0.0;
  Tensor grad;  ///< d(loss)/d(model output)
};

using LossFn = std::function<LossResult(const Tensor& output, const Batch& batch)>;

struct StepOptions {
  bool ste_clip_zero = false;
  bool track_max = false;
};

/// One quantization-aware training iteration: quantized forward, backward
/// through straight-through quantizers, then an optimizer update of the
/// master weights and every learnable exponent bias.
///
/// Returns the loss before the update. A non-finite loss throws NonFinite
/// naming the first layer whose output went non-finite.
double qat_step(ModelGraph& model, const Batch& batch, Optimizer& optim, const LossFn& loss,
                const StepOptions& opt = {});

/// Supplies batches; an empty optional ends the stream.
using BatchStream = std::function<std::optional<Batch>()>;

struct CalibrationResult {
  int iterations = 0;
  std::vector<double> weight_E0;
  std::vector<double> activation_E0;
};

/// Trains for up to n_iters iterations with quantizers disabled, tracking
/// the largest weight and activation magnitudes, then initializes every
/// exponent bias from those maxima, marks them learnable (or not) and
/// enables quantization. Throws InvalidArgument on an empty stream.
CalibrationResult warmup_calibrate(ModelGraph& model, Optimizer& optim, const LossFn& loss, const BatchStream& stream,
                                   int n_iters, num::BiasInit init, bool learnable = true,
                                   const StepOptions& opt = {});

}  // namespace mfq::nn
