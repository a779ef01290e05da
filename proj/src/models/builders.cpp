#include "mfq/models/builders.hpp"

#include <map>
#include <sstream>

#include "mfq/error.hpp"

namespace mfq::models {

using nn::LayerKind;
using nn::ModelGraph;

namespace {

// conv3x3 + BN + ReLU + activation quantizer; returns the quantizer layer.
int conv_group(ModelGraph& g, int in, int in_ch, int out_ch, const std::string& name) {
  const int conv = g.add_conv(in, in_ch, out_ch, 3, name + ".conv");
  const int bn = g.add_batchnorm(conv, out_ch, name + ".bn");
  const int act = g.add_simple(LayerKind::ReLU, {bn}, name + ".relu");
  return g.add_activation_quantizer(act, conv, name + ".aq");
}

void apply_template(ModelGraph& g, const nn::QuantAttachment& t) {
  for (auto& a : g.attachments) {
    const bool qa = a.quantize_activation;
    a = t;
    a.quantize_activation = qa;
    a.g_weight_E0 = a.g_activation_E0 = 0.0;
    a.observed_weight_max = a.observed_activation_max = 0.0;
  }
}

}  // namespace

ModelGraph build_thin_unet32(int in_channels, const nn::QuantAttachment& quant) {
  if (in_channels < 1) throw InvalidArgument("thin U-Net needs at least one input channel");
  constexpr int kWidth = 32;
  constexpr int kStages = 5;
  ModelGraph g;
  g.input.channels = static_cast<std::size_t>(in_channels);
  g.spec = "thin-unet32:c=" + std::to_string(in_channels);

  std::vector<int> skips;
  int x = -1;
  int ch = in_channels;
  for (int s = 1; s <= kStages; ++s) {
    const std::string name = "enc" + std::to_string(s);
    if (s > 1) x = g.add_simple(LayerKind::MaxPool, {x}, name + ".pool");
    x = conv_group(g, x, ch, kWidth, name + ".0");
    x = conv_group(g, x, kWidth, kWidth, name + ".1");
    ch = kWidth;
    skips.push_back(x);
  }
  for (int s = kStages; s >= 1; --s) {
    const std::string name = "dec" + std::to_string(s);
    int in_ch = kWidth;
    if (s < kStages) {
      x = g.add_simple(LayerKind::Upsample, {x}, name + ".up");
      x = g.add_simple(LayerKind::Concat, {skips[s - 1], x}, name + ".cat");
      in_ch = 2 * kWidth;
    }
    x = conv_group(g, x, in_ch, kWidth, name + ".0");
    x = conv_group(g, x, kWidth, kWidth, name + ".1");
  }
  g.add_conv(x, kWidth, 1, 1, "head");
  g.init_parameters(0);
  apply_template(g, quant);
  return g;
}

ModelGraph build_toy_cnn(const ToySpec& spec, const nn::QuantAttachment& quant) {
  if (spec.in_channels < 1 || spec.width < 1 || spec.scales < 1) {
    throw InvalidArgument("toy model needs positive channels, width and at least one scale");
  }
  ModelGraph g;
  g.input.channels = static_cast<std::size_t>(spec.in_channels);
  std::ostringstream name;
  if (spec.kind == ToyKind::Segmentation) {
    name << "toy-seg:c=" << spec.in_channels << ",w=" << spec.width << ",s=" << spec.scales;
    std::vector<int> skips, widths;
    int x = -1, ch = spec.in_channels;
    for (int s = 0; s < spec.scales; ++s) {
      const int w = spec.width << s;
      const std::string n = "enc" + std::to_string(s + 1);
      if (s > 0) x = g.add_simple(LayerKind::MaxPool, {x}, n + ".pool");
      x = conv_group(g, x, ch, w, n + ".0");
      x = conv_group(g, x, w, w, n + ".1");
      ch = w;
      skips.push_back(x);
      widths.push_back(w);
    }
    for (int s = spec.scales - 2; s >= 0; --s) {
      const std::string n = "dec" + std::to_string(s + 1);
      x = g.add_simple(LayerKind::Upsample, {x}, n + ".up");
      x = g.add_simple(LayerKind::Concat, {skips[s], x}, n + ".cat");
      x = conv_group(g, x, widths[s] + ch, widths[s], n + ".0");
      ch = widths[s];
    }
    g.add_conv(x, ch, 1, 1, "head");
  } else {
    if (spec.classes < 2 || spec.input_size < 1 || spec.input_size % (1 << spec.scales) != 0) {
      throw InvalidArgument("classifier needs >= 2 classes and an input size divisible by 2^scales");
    }
    name << "toy-cls:c=" << spec.in_channels << ",w=" << spec.width << ",s=" << spec.scales
         << ",k=" << spec.classes << ",h=" << spec.input_size;
    g.input.height = g.input.width = static_cast<std::size_t>(spec.input_size);
    int x = -1, ch = spec.in_channels;
    for (int s = 0; s < spec.scales; ++s) {
      const int w = spec.width << s;
      x = conv_group(g, x, ch, w, "stage" + std::to_string(s + 1));
      x = g.add_simple(LayerKind::MaxPool, {x}, "stage" + std::to_string(s + 1) + ".pool");
      ch = w;
    }
    const int side = spec.input_size >> spec.scales;
    g.add_dense(x, ch * side * side, spec.classes, "fc");
  }
  g.spec = name.str();
  g.init_parameters(0);
  apply_template(g, quant);
  return g;
}

ModelGraph build_from_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::map<std::string, int> kv;
  if (colon != std::string::npos) {
    std::istringstream is(spec.substr(colon + 1));
    std::string item;
    while (std::getline(is, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw FormatError("bad model spec item '" + item + "'");
      try {
        kv[item.substr(0, eq)] = std::stoi(item.substr(eq + 1));
      } catch (const std::exception&) {
        throw FormatError("bad model spec value in '" + item + "'");
      }
    }
  }
  auto get = [&](const char* k, int def) {
    auto it = kv.find(k);
    return it == kv.end() ? def : it->second;
  };
  if (kind == "thin-unet32") return build_thin_unet32(get("c", 3));
  ToySpec ts;
  ts.in_channels = get("c", 3);
  ts.width = get("w", 8);
  ts.scales = get("s", 2);
  if (kind == "toy-seg") return build_toy_cnn(ts);
  if (kind == "toy-cls") {
    ts.kind = ToyKind::Classifier;
    ts.classes = get("k", 10);
    ts.input_size = get("h", 16);
    return build_toy_cnn(ts);
  }
  throw FormatError("unknown model kind '" + kind + "'");
}

std::vector<int> conv3x3_widths(const ModelGraph& g) {
  std::vector<int> w;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::Conv && l.kernel == 3) w.push_back(l.out_channels);
  }
  return w;
}

}  // namespace mfq::models
