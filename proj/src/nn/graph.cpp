#include "mfq/nn/graph.hpp"

#include <cmath>

#include "mfq/error.hpp"

namespace mfq::nn {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Concat: return "concat";
    case LayerKind::Quantize: return "quantize";
  }
  return "?";
}

namespace {

void check_input(const ModelGraph& g, int input) {
  if (input < -1 || input >= static_cast<int>(g.layers.size())) {
    throw InvalidArgument("layer input index " + std::to_string(input) + " does not precede the new layer");
  }
}

}  // namespace

int ModelGraph::add_conv(int in, int in_ch, int out_ch, int kernel, const std::string& name, bool quantizable) {
  check_input(*this, in);
  if (in_ch < 1 || out_ch < 1 || (kernel != 1 && kernel != 3)) throw InvalidArgument("bad conv layer " + name);
  Layer l;
  l.kind = LayerKind::Conv;
  l.inputs = {in};
  l.name = name;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  const auto k = static_cast<std::size_t>(kernel);
  params.emplace_back(name + ".weight",
                      Tensor(Shape{static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch), k, k}));
  l.weight = static_cast<int>(params.size()) - 1;
  params.emplace_back(name + ".bias", Tensor(Shape{static_cast<std::size_t>(out_ch)}), false);
  l.bias = static_cast<int>(params.size()) - 1;
  if (quantizable) {
    attachments.emplace_back();
    l.attachment = static_cast<int>(attachments.size()) - 1;
    attachments.back().quantize_activation = false;
  }
  layers.push_back(std::move(l));
  return output();
}

int ModelGraph::add_dense(int in, int in_features, int out_features, const std::string& name, bool quantizable) {
  check_input(*this, in);
  if (in_features < 1 || out_features < 1) throw InvalidArgument("bad dense layer " + name);
  Layer l;
  l.kind = LayerKind::Dense;
  l.inputs = {in};
  l.name = name;
  l.in_channels = in_features;
  l.out_channels = out_features;
  params.emplace_back(name + ".weight",
                      Tensor(Shape{static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)}));
  l.weight = static_cast<int>(params.size()) - 1;
  params.emplace_back(name + ".bias", Tensor(Shape{static_cast<std::size_t>(out_features)}), false);
  l.bias = static_cast<int>(params.size()) - 1;
  if (quantizable) {
    attachments.emplace_back();
    l.attachment = static_cast<int>(attachments.size()) - 1;
    attachments.back().quantize_activation = false;
  }
  layers.push_back(std::move(l));
  return output();
}

int ModelGraph::add_batchnorm(int in, int channels, const std::string& name) {
  check_input(*this, in);
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.inputs = {in};
  l.name = name;
  l.in_channels = l.out_channels = channels;
  const auto c = static_cast<std::size_t>(channels);
  params.emplace_back(name + ".gamma", Tensor(Shape{c}, 1.0), false);
  l.weight = static_cast<int>(params.size()) - 1;
  params.emplace_back(name + ".beta", Tensor(Shape{c}, 0.0), false);
  l.bias = static_cast<int>(params.size()) - 1;
  bn_states.emplace_back(c);
  l.bn = static_cast<int>(bn_states.size()) - 1;
  layers.push_back(std::move(l));
  return output();
}

int ModelGraph::add_simple(LayerKind kind, std::vector<int> inputs, const std::string& name) {
  const std::size_t arity = kind == LayerKind::Concat ? 2 : 1;
  if (inputs.size() != arity) throw InvalidArgument("wrong input count for layer " + name);
  for (int i : inputs) check_input(*this, i);
  Layer l;
  l.kind = kind;
  l.inputs = std::move(inputs);
  l.name = name;
  layers.push_back(std::move(l));
  return output();
}

int ModelGraph::add_activation_quantizer(int in, int owner, const std::string& name) {
  check_input(*this, in);
  if (owner < 0 || owner >= static_cast<int>(layers.size()) || layers[owner].attachment < 0) {
    throw InvalidArgument("activation quantizer " + name + " needs a quantizable owner layer");
  }
  Layer l;
  l.kind = LayerKind::Quantize;
  l.inputs = {in};
  l.name = name;
  l.attachment = layers[owner].attachment;
  attachments[l.attachment].quantize_activation = true;
  layers.push_back(std::move(l));
  return output();
}

void ModelGraph::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const Layer& l : layers) {
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense) continue;
    Parameter& w = params[l.weight];
    const double fan_in = static_cast<double>(w.value.numel() / w.value.dim(0));
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : w.value.data) v = nd(rng);
    params[l.bias].value.fill(0.0);
  }
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

Tape::Id ModelGraph::forward(Tape& tape, const Tensor& x, const ForwardOptions& opt) {
  if (layers.empty()) throw InvalidArgument("model has no layers");
  if (x.rank() != 4 || x.dim(1) != input.channels) {
    throw ShapeError("model input " + shape_str(x.shape) + " does not match " + std::to_string(input.channels) +
                     " channels");
  }
  std::vector<Tape::Id> out(layers.size());
  const Tape::Id in = tape.constant(x);
  std::vector<Tape::Id> args;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    args.clear();
    for (int src : layers[i].inputs) args.push_back(src < 0 ? in : out[src]);
    out[i] = forward_layer(static_cast<int>(i), args, tape, opt);
  }
  return out.back();
}

Tape::Id ModelGraph::forward_layer(int index, std::span<const Tape::Id> in, Tape& tape, const ForwardOptions& opt) {
  Layer& l = layers.at(index);
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::Dense: {
      Parameter& w = params[l.weight];
      Tape::Id wid = tape.param(w);
      if (l.attachment >= 0) {
        QuantAttachment& a = attachments[l.attachment];
        if (opt.track_max) a.observed_weight_max = std::max(a.observed_weight_max, w.value.max_abs());
        if (a.enabled) {
          wid = ops::quantize(tape, wid, a.weight_q, a.weight_q.learnable ? &a.g_weight_E0 : nullptr,
                              opt.ste_clip_zero, l.name + ".wq");
        }
      }
      const Tape::Id bid = tape.param(params[l.bias]);
      if (l.kind == LayerKind::Conv) {
        const Tensor& x = tape.value(in[0]);
        if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(l.in_channels)) {
          throw ShapeError("layer " + l.name + ": input " + shape_str(x.shape) + " expects " +
                           std::to_string(l.in_channels) + " channels");
        }
        return ops::conv2d(tape, in[0], wid, bid, l.kernel / 2);
      }
      return ops::dense(tape, in[0], wid, bid);
    }
    case LayerKind::BatchNorm:
      return ops::batchnorm(tape, in[0], tape.param(params[l.weight]), tape.param(params[l.bias]), bn_states[l.bn],
                            opt.training);
    case LayerKind::ReLU: return ops::relu(tape, in[0]);
    case LayerKind::MaxPool: return ops::maxpool2(tape, in[0]);
    case LayerKind::Upsample: return ops::upsample2(tape, in[0]);
    case LayerKind::Concat: return ops::concat(tape, in[0], in[1]);
    case LayerKind::Quantize: {
      QuantAttachment& a = attachments[l.attachment];
      if (opt.track_max) a.observed_activation_max = std::max(a.observed_activation_max, tape.value(in[0]).max_abs());
      if (!a.enabled || !a.quantize_activation) return in[0];
      return ops::quantize(tape, in[0], a.activation_q, a.activation_q.learnable ? &a.g_activation_E0 : nullptr,
                           opt.ste_clip_zero, l.name);
    }
  }
  throw Error("unknown layer kind");
}

std::vector<Shape> ModelGraph::infer_shapes(const Shape& in) const {
  if (in.size() != 4 || in[1] != input.channels) {
    throw ShapeError("model input " + shape_str(in) + " does not match " + std::to_string(input.channels) +
                     " channels");
  }
  std::vector<Shape> out;
  out.reserve(layers.size());
  for (const Layer& l : layers) {
    auto src = [&](std::size_t k) -> const Shape& { return l.inputs[k] < 0 ? in : out[l.inputs[k]]; };
    const Shape& s = src(0);
    Shape r = s;
    switch (l.kind) {
      case LayerKind::Conv:
        if (s.size() != 4 || s[1] != static_cast<std::size_t>(l.in_channels)) {
          throw ShapeError("layer " + l.name + ": bad input " + shape_str(s));
        }
        r[1] = static_cast<std::size_t>(l.out_channels);
        break;
      case LayerKind::Dense:
        if (shape_numel(s) / s[0] != static_cast<std::size_t>(l.in_channels)) {
          throw ShapeError("layer " + l.name + ": bad input " + shape_str(s));
        }
        r = Shape{s[0], static_cast<std::size_t>(l.out_channels)};
        break;
      case LayerKind::MaxPool:
        if (s.size() != 4 || s[2] % 2 || s[3] % 2) throw ShapeError("layer " + l.name + ": odd spatial size");
        r[2] /= 2;
        r[3] /= 2;
        break;
      case LayerKind::Upsample:
        r[2] *= 2;
        r[3] *= 2;
        break;
      case LayerKind::Concat: {
        const Shape& b = src(1);
        if (b.size() != 4 || b[0] != s[0] || b[2] != s[2] || b[3] != s[3]) {
          throw ShapeError("layer " + l.name + ": concat of " + shape_str(s) + " and " + shape_str(b));
        }
        r[1] = s[1] + b[1];
        break;
      }
      default: break;
    }
    out.push_back(std::move(r));
  }
  return out;
}

void ModelGraph::zero_grad() {
  for (auto& p : params) p.zero_grad();
  for (auto& a : attachments) a.g_weight_E0 = a.g_activation_E0 = 0.0;
}

void ModelGraph::set_quantization(bool enabled) {
  for (auto& a : attachments) a.enabled = enabled;
}

void ModelGraph::configure_quantizers(const num::MinifloatFormat& weights, const num::MinifloatFormat& activations,
                                      double weight_E0, double activation_E0, bool learnable) {
  for (auto& a : attachments) {
    a.weight_q = num::QuantizerState{weight_E0, learnable, weights};
    a.activation_q = num::QuantizerState{activation_E0, learnable, activations};
  }
}

}  // namespace mfq::nn
