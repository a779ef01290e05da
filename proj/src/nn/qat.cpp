#include "mfq/nn/qat.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mfq/error.hpp"

namespace mfq::nn {

namespace {

std::string describe_non_finite(const Tape& tape) {
  std::ostringstream os;
  for (Tape::Id i = 0; i < tape.size(); ++i) {
    const Tensor& v = tape.value(i);
    std::size_t bad = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : v.data) {
      if (!std::isfinite(x)) {
        ++bad;
      } else {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (bad > 0) {
      os << "first non-finite signal at node " << i << " (" << tape.label(i) << "): " << bad << "/" << v.numel()
         << " non-finite, finite range [" << lo << ", " << hi << "]";
      return os.str();
    }
  }
  return "all recorded signals finite; loss itself diverged";
}

void check_biases(const ModelGraph& model) {
  for (std::size_t i = 0; i < model.attachments.size(); ++i) {
    const auto& a = model.attachments[i];
    if (!std::isfinite(a.weight_q.E0) || !std::isfinite(a.activation_q.E0)) {
      throw NonFinite("exponent bias of quantizer " + std::to_string(i) + " became non-finite",
                      static_cast<long>(i));
    }
  }
}

}  // namespace

double qat_step(ModelGraph& model, const Batch& batch, Optimizer& optim, const LossFn& loss, const StepOptions& opt) {
  model.zero_grad();
  Tape tape;
  ForwardOptions fo;
  fo.training = true;
  fo.track_max = opt.track_max;
  fo.ste_clip_zero = opt.ste_clip_zero;
  const Tape::Id out = model.forward(tape, batch.inputs, fo);
  LossResult lr = loss(tape.value(out), batch);
  if (!std::isfinite(lr.value)) throw NonFinite("non-finite loss: " + describe_non_finite(tape));
  tape.backward(out, lr.grad);
  const auto params = collect_params(model);
  optim.step(params);
  check_biases(model);
  return lr.value;
}

CalibrationResult warmup_calibrate(ModelGraph& model, Optimizer& optim, const LossFn& loss, const BatchStream& stream,
                                   int n_iters, num::BiasInit init, bool learnable, const StepOptions& opt) {
  model.set_quantization(false);
  for (auto& a : model.attachments) a.observed_weight_max = a.observed_activation_max = 0.0;
  StepOptions so = opt;
  so.track_max = true;

  CalibrationResult res;
  for (; res.iterations < n_iters; ++res.iterations) {
    std::optional<Batch> b = stream();
    if (!b) break;
    qat_step(model, *b, optim, loss, so);
  }
  if (res.iterations == 0) throw InvalidArgument("warmup_calibrate: empty data stream");

  // Weights moved during the last update; the final values count as seen too.
  for (const Layer& l : model.layers) {
    if (l.attachment < 0 || (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense)) continue;
    auto& a = model.attachments[l.attachment];
    a.observed_weight_max = std::max(a.observed_weight_max, model.params[l.weight].value.max_abs());
  }
  for (auto& a : model.attachments) {
    // An all-zero signal has no scale; fall back to the unit range.
    const double wmax = a.observed_weight_max > 0.0 ? a.observed_weight_max : 1.0;
    const double amax = a.observed_activation_max > 0.0 ? a.observed_activation_max : 1.0;
    a.weight_q.E0 = num::init_exponent_bias(wmax, a.weight_q.format, init);
    a.activation_q.E0 = num::init_exponent_bias(amax, a.activation_q.format, init);
    a.weight_q.learnable = learnable;
    a.activation_q.learnable = learnable;
    a.enabled = true;
    res.weight_E0.push_back(a.weight_q.E0);
    res.activation_E0.push_back(a.activation_q.E0);
  }
  return res;
}

}  // namespace mfq::nn
