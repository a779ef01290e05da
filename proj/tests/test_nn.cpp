#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "mfq/error.hpp"
#include "mfq/models/builders.hpp"
#include "mfq/models/loss.hpp"
#include "mfq/models/train.hpp"
#include "mfq/nn/ops.hpp"
#include "mfq/nn/optim.hpp"
#include "mfq/nn/qat.hpp"
#include "mfq/numeric/quantize.hpp"

using namespace mfq;
using namespace mfq::nn;

namespace {

const num::MinifloatFormat kE3M2{3, 2};

// conv3x3(3->8) + BN + ReLU + activation quantizer, then a 1x1 head.
ModelGraph two_layer_cnn(int channels = 3) {
  ModelGraph g;
  g.input = {static_cast<std::size_t>(channels), 0, 0};
  const int c1 = g.add_conv(-1, channels, 8, 3, "conv1");
  const int bn = g.add_batchnorm(c1, 8, "bn1");
  const int r = g.add_simple(LayerKind::ReLU, {bn}, "relu1");
  const int q = g.add_activation_quantizer(r, c1, "act1");
  g.add_conv(q, 8, 1, 1, "head");
  g.init_parameters(3);
  return g;
}

models::Dataset small_seg(std::size_t n, int size = 32) {
  models::SyntheticShipConfig cfg;
  cfg.image_size = size;
  cfg.seed = 5;
  models::Dataset d;
  d.samples = models::gen_synthetic_segmentation(cfg, static_cast<long>(n));
  return d;
}

std::vector<double> flat_state(const ModelGraph& g) {
  std::vector<double> v;
  for (const auto& p : g.params) v.insert(v.end(), p.value.data.begin(), p.value.data.end());
  for (const auto& a : g.attachments) {
    v.push_back(a.weight_q.E0);
    v.push_back(a.activation_q.E0);
  }
  return v;
}

}  // namespace

TEST_CASE("layer examples") {
  Tape t;
  const auto x = t.constant(Tensor({1, 1, 1, 3}, {-1.0, 0.0, 2.0}));
  CHECK(t.value(ops::relu(t, x)).data == nn::RealVec{0.0, 0.0, 2.0});

  const auto p = t.constant(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  const Tensor& pooled = t.value(ops::maxpool2(t, p));
  CHECK(pooled.shape == Shape{1, 1, 1, 1});
  CHECK(pooled.data[0] == 4.0);

  std::mt19937_64 rng(1);
  const Tensor img = gradcheck::random_tensor({2, 2, 5, 4}, rng);
  Tensor w({2, 2, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  w.at(1, 1, 1, 1) = 1.0;
  const auto c = ops::conv2d(t, t.constant(img), t.constant(w), t.constant(Tensor({2})), 1);
  CHECK(t.value(c) == img);
}

TEST_CASE("dense layer with loss = sum y gives g_W = x") {
  Tape t;
  const Tensor xv({1, 3}, {0.5, -2.0, 3.0});
  const auto x = t.constant(xv);
  const auto w = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto y = ops::dense(t, x, w, t.constant(Tensor({2})));
  t.backward(y, Tensor({1, 2}, 1.0));
  CHECK(t.grad(w).data == nn::RealVec{0.5, -2.0, 3.0, 0.5, -2.0, 3.0});
}

TEST_CASE("maxpool ties route the gradient to the first element") {
  Tape t;
  const auto x = t.constant(Tensor({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0}));
  const auto y = ops::maxpool2(t, x);
  t.backward(y, Tensor({1, 1, 1, 1}, 1.0));
  CHECK(t.grad(x).data == nn::RealVec{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("upsample2 keeps constant maps constant") {
  Tape t;
  const auto y = ops::upsample2(t, t.constant(Tensor({1, 2, 3, 2}, 1.5)));
  CHECK(t.value(y).shape == Shape{1, 2, 6, 4});
  for (double v : t.value(y).data) CHECK(v == 1.5);
}

TEST_CASE("every layer backward matches central finite differences") {
  for (const auto& r : gradcheck::run_suite(100, 2024)) {
    INFO(r.name << " worst relative error " << r.worst << " over " << r.trials << " trials");
    CHECK(r.ok);
  }
}

TEST_CASE("quantizer node is the identity for gradients inside the range") {
  std::mt19937_64 rng(9);
  const num::QuantizerState q{3.0, true, kE3M2};
  const auto range = q.range();
  std::uniform_real_distribution<double> mag(range.x_min * 1.01, range.x_max * 0.99);
  Tensor xv({2, 3, 4, 4});
  for (std::size_t i = 0; i < xv.numel(); ++i) xv.data[i] = (i % 3 ? 1.0 : -1.0) * mag(rng);
  const Tensor w = gradcheck::random_tensor({2, 3, 3, 3}, rng);
  const Tensor seed = gradcheck::random_tensor({2, 2, 4, 4}, rng);

  auto grad_of = [&](bool with_q) {
    Tape t;
    const auto x = t.constant(xv);
    double gE0 = 0.0;
    const auto xi = with_q ? ops::quantize(t, x, q, &gE0, false) : x;
    const auto y = ops::conv2d(t, xi, t.constant(w), t.constant(Tensor({2})), 1);
    t.backward(y, seed);
    CHECK(gE0 == 0.0);
    return t.grad(x).data;
  };
  CHECK(grad_of(true) == grad_of(false));
}

TEST_CASE("tape misuse") {
  Tape t;
  const auto x = t.constant(Tensor({1, 1, 2, 2}, 1.0));
  const auto y = ops::relu(t, x);
  CHECK_THROWS_AS(t.backward(y, Tensor({1, 1, 1, 1})), ShapeError);
  t.backward(y, Tensor({1, 1, 2, 2}, 1.0));
  CHECK_THROWS(t.backward(y, Tensor({1, 1, 2, 2}, 1.0)));
  CHECK_THROWS(ops::relu(t, x));
  Tape empty;
  CHECK_THROWS(empty.backward(0, Tensor()));
}

TEST_CASE("optimizer arithmetic and schedules") {
  OptimConfig c;
  c.algorithm = OptimAlgorithm::SGDMomentum;
  c.momentum = 0.0;
  c.lr = 0.1;
  Optimizer sgd(c);
  std::vector<double> w{1.0}, g{2.0};
  std::vector<ParamRef> ps{ParamRef{w, g, true}};
  sgd.step(ps);
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
  g[0] = 0.0;
  sgd.step(ps);
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));

  OptimConfig m;
  m.lr = 0.001;
  m.schedule = LrSchedule::MultiStep;
  m.step_every = 200;
  m.step_gamma = 0.5;
  CHECK(scheduled_lr(m, 401) == doctest::Approx(0.00025).epsilon(1e-12));
  CHECK(scheduled_lr(m, 199) == 0.001);
  CHECK(scheduled_lr(m, 200) == 0.0005);

  OptimConfig cos;
  cos.lr = 0.1;
  cos.schedule = LrSchedule::Cosine;
  cos.total_epochs = 10;
  CHECK(scheduled_lr(cos, 0) == doctest::Approx(0.1));
  CHECK(scheduled_lr(cos, 5) == doctest::Approx(0.05));
  CHECK(scheduled_lr(cos, 10) == doctest::Approx(0.0).epsilon(1e-12));

  // Adam's first step moves every coordinate by about lr regardless of scale.
  Optimizer adam(OptimConfig{});
  std::vector<double> a{1.0, 1.0}, ga{1e-3, -50.0};
  std::vector<ParamRef> pa{ParamRef{a, ga, true}};
  adam.step(pa);
  CHECK(a[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(a[1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-6));

  // Weight decay only on flagged parameters.
  OptimConfig d = c;
  d.weight_decay = 0.5;
  Optimizer sgd_wd(d);
  std::vector<double> w1{2.0}, w2{2.0}, z1{0.0}, z2{0.0};
  std::vector<ParamRef> pw{ParamRef{w1, z1, true}, ParamRef{w2, z2, false}};
  sgd_wd.step(pw);
  CHECK(w1[0] == doctest::Approx(1.9));
  CHECK(w2[0] == 2.0);
}

TEST_CASE("qat_step with zero learning rate changes nothing") {
  auto g = two_layer_cnn();
  g.configure_quantizers(kE3M2, kE3M2, 3.0, 3.0, true);
  g.set_quantization(true);
  const auto data = small_seg(4);
  OptimConfig c;
  c.lr = 0.0;
  Optimizer opt(c);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto before = flat_state(g);
  const double loss = qat_step(g, models::make_batch(data.samples, idx), opt, models::loss_for(data));
  CHECK(std::isfinite(loss));
  CHECK(flat_state(g) == before);
  // The bias gradient itself is populated on saturating layers or zero, never NaN.
  for (const auto& a : g.attachments) CHECK(std::isfinite(a.g_weight_E0));
}

TEST_CASE("disabled quantizers reproduce plain training bit for bit") {
  auto quantized = two_layer_cnn();
  quantized.configure_quantizers(kE3M2, kE3M2, 3.0, 3.0, true);
  quantized.set_quantization(false);
  auto plain = two_layer_cnn();
  for (auto& l : plain.layers) {
    if (l.kind != LayerKind::Quantize) l.attachment = -1;
  }
  plain.set_quantization(false);

  const auto data = small_seg(8);
  Optimizer o1(OptimConfig{}), o2(OptimConfig{});
  const auto loss = models::loss_for(data);
  for (int step = 0; step < 5; ++step) {
    const std::size_t base = static_cast<std::size_t>(step % 2) * 4;
    std::vector<std::size_t> idx{base, base + 1, base + 2, base + 3};
    const auto b = models::make_batch(data.samples, idx);
    const double l1 = qat_step(quantized, b, o1, loss);

    // Hand-rolled unquantized step.
    plain.zero_grad();
    Tape t;
    const auto out = plain.forward(t, b.inputs, ForwardOptions{});
    const auto lr = loss(t.value(out), b);
    t.backward(out, lr.grad);
    auto ps = collect_params(plain);
    o2.step(ps);
    CHECK(l1 == lr.value);
  }
  for (std::size_t i = 0; i < plain.params.size(); ++i) CHECK(quantized.params[i].value == plain.params[i].value);
}

TEST_CASE("master weights stay full precision under quantized training") {
  auto g = two_layer_cnn();
  g.configure_quantizers(kE3M2, kE3M2, 3.0, 3.0, true);
  g.set_quantization(true);
  Parameter& w = g.params[0];
  for (std::size_t i = 0; i < w.value.numel(); ++i) w.value.data[i] = 0.1 * std::numbers::pi * std::sin(1.0 + i);
  const Tensor start = w.value;
  const auto data = small_seg(8);
  OptimConfig c;
  c.lr = 1e-4;
  Optimizer opt(c);
  const auto loss = models::loss_for(data);
  Tensor prev = w.value;
  for (int step = 0; step < 10; ++step) {
    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
    qat_step(g, models::make_batch(data.samples, idx), opt, loss);
    double max_move = 0.0;
    for (std::size_t i = 0; i < w.value.numel(); ++i) max_move = std::max(max_move, std::fabs(w.value[i] - prev[i]));
    // Adam moves each coordinate by at most about lr per step.
    CHECK(max_move <= 1.1e-4);
    prev = w.value;
  }
  // Channels feeding a flushed head weight get no gradient and stay put.
  std::size_t off_grid = 0, moved = 0;
  for (std::size_t i = 0; i < w.value.numel(); ++i) {
    off_grid += num::quantize_scalar(w.value[i], kE3M2, g.attachments[0].weight_q.bias()) != w.value[i];
    moved += w.value[i] != start[i];
  }
  CHECK(off_grid == w.value.numel());
  CHECK(moved >= w.value.numel() * 3 / 4);
}

TEST_CASE("warm-up calibration") {
  SUBCASE("observed weight max equals the tensor max without updates") {
    auto g = two_layer_cnn();
    g.configure_quantizers(kE3M2, kE3M2, 0.0, 0.0, true);
    const auto data = small_seg(4);
    OptimConfig c;
    c.lr = 0.0;
    Optimizer opt(c);
    const auto res = warmup_calibrate(g, opt, models::loss_for(data), models::training_stream(data, {.batch_size = 2}),
                                      3, num::BiasInit::TightFit);
    CHECK(res.iterations == 3);
    CHECK(g.attachments[0].observed_weight_max == g.params[0].value.max_abs());
    CHECK(g.attachments[0].weight_q.E0 ==
          num::init_exponent_bias(g.params[0].value.max_abs(), kE3M2, num::BiasInit::TightFit));
    CHECK(g.attachments[0].enabled);
    CHECK(g.attachments[0].weight_q.learnable);
  }
  SUBCASE("activation max is the running max over iterations") {
    auto g = two_layer_cnn();
    g.configure_quantizers(kE3M2, kE3M2, 0.0, 0.0, true);
    const auto data = small_seg(6);
    OptimConfig c;
    c.lr = 0.0;
    Optimizer opt(c);
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      // With lr = 0 and training-mode BN, each batch's activation max is independent.
      std::vector<std::size_t> idx{2 * i, 2 * i + 1};
      const auto b = models::make_batch(data.samples, idx);
      Tape t;
      ForwardOptions fo;
      g.forward(t, b.inputs, fo);
      for (Tape::Id n = 0; n < t.size(); ++n) {
        if (t.label(n) == "relu") expect = std::max(expect, t.value(n).max_abs());
      }
    }
    std::size_t k = 0;
    BatchStream stream = [&]() -> std::optional<Batch> {
      if (k == 3) return std::nullopt;
      std::vector<std::size_t> idx{2 * k, 2 * k + 1};
      ++k;
      return models::make_batch(data.samples, idx);
    };
    const auto res = warmup_calibrate(g, opt, models::loss_for(data), stream, 10, num::BiasInit::Centered);
    CHECK(res.iterations == 3);
    CHECK(g.attachments[0].observed_activation_max == expect);
  }
  SUBCASE("empty stream is an error") {
    auto g = two_layer_cnn();
    Optimizer opt(OptimConfig{});
    const auto data = small_seg(2);
    CHECK_THROWS_AS(warmup_calibrate(g, opt, models::loss_for(data), [] { return std::optional<Batch>{}; }, 5,
                                     num::BiasInit::Centered),
                    InvalidArgument);
  }
  SUBCASE("calibrated biases are reproducible") {
    auto run = [] {
      auto g = two_layer_cnn();
      g.configure_quantizers(kE3M2, kE3M2, 0.0, 0.0, true);
      const auto data = small_seg(8);
      Optimizer opt(OptimConfig{});
      return warmup_calibrate(g, opt, models::loss_for(data), models::training_stream(data, {.batch_size = 4}), 6,
                              num::BiasInit::Centered);
    };
    const auto a = run(), b = run();
    CHECK(a.weight_E0 == b.weight_E0);
    CHECK(a.activation_E0 == b.activation_E0);
  }
}

TEST_CASE("toy two-layer CNN: E3M2 QAT loss decreases window over window") {
  auto g = two_layer_cnn();
  g.configure_quantizers(kE3M2, kE3M2, 0.0, 0.0, true);
  const auto data = small_seg(64);
  OptimConfig c;
  c.lr = 3e-3;
  Optimizer opt(c);
  const auto loss = models::loss_for(data);
  models::EpochOptions eo;
  eo.batch_size = 8;
  eo.seed = 7;
  warmup_calibrate(g, opt, loss, models::training_stream(data, eo), 20, num::BiasInit::Centered);

  auto stream = models::training_stream(data, eo);
  std::vector<double> window;
  for (int w = 0; w < 4; ++w) {
    double s = 0.0;
    for (int i = 0; i < 50; ++i) s += qat_step(g, *stream(), opt, loss);
    window.push_back(s / 50.0);
  }
  INFO("window means " << window[0] << " " << window[1] << " " << window[2] << " " << window[3]);
  for (std::size_t i = 1; i < window.size(); ++i) CHECK(window[i] < window[i - 1]);
}

TEST_CASE("non-finite loss names the offending node") {
  auto g = two_layer_cnn();
  // ReLU maps NaN to 0, so poison the head, which feeds the loss directly.
  g.params[g.layers.back().weight].value.data[0] = std::numeric_limits<double>::infinity();
  const auto data = small_seg(2);
  Optimizer opt(OptimConfig{});
  std::vector<std::size_t> idx{0, 1};
  try {
    qat_step(g, models::make_batch(data.samples, idx), opt, models::loss_for(data));
    FAIL("expected NonFinite");
  } catch (const NonFinite& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}
