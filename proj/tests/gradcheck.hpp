// Finite-difference gradient checks for tape ops, losses and whole models.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfq/models/builders.hpp"
#include "mfq/models/loss.hpp"
#include "mfq/nn/ops.hpp"
#include "mfq/nn/qat.hpp"

namespace mfq::gradcheck {

using nn::Shape;
using nn::Tape;
using nn::Tensor;

struct CaseResult {
  std::string name;
  int trials = 0;
  double worst = 0.0;  ///< largest normwise relative error seen
  bool ok = true;
};

/// max|a - n| / max|n|. The 1e-6 floor makes structurally zero gradients
/// (a conv bias feeding batch norm) compare against FD noise absolutely.
inline double rel_error(std::span<const double> a, std::span<const double> n) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    diff = std::max(diff, std::fabs(a[i] - n[i]));
    scale = std::max(scale, std::fabs(n[i]));
  }
  return diff / std::max(scale, 1e-6);
}

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data) v = d(rng);
  return t;
}

using Builder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

/// Projects the op output on a random direction r, so dL/dy = r, and
/// compares every leaf gradient with central differences of L.
inline double check_op(std::vector<Tensor> leaves, const Builder& build, std::mt19937_64& rng, double h = 1e-5) {
  Tensor r;
  std::vector<std::vector<double>> analytic;
  {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const Tensor& l : leaves) ids.push_back(t.constant(l));
    const auto y = build(t, ids);
    r = random_tensor(t.value(y).shape, rng);
    t.backward(y, r);
    for (auto id : ids) {
      const Tensor& g = t.grad(id);
      analytic.push_back(g.data.empty() ? std::vector<double>(t.value(id).numel(), 0.0)
                                         : std::vector<double>(g.data.begin(), g.data.end()));
    }
  }
  auto loss = [&] {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const Tensor& l : leaves) ids.push_back(t.constant(l));
    const Tensor& y = t.value(build(t, ids));
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += r.data[i] * y.data[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    std::vector<double> fd(leaves[li].numel());
    for (std::size_t k = 0; k < fd.size(); ++k) {
      const double x0 = leaves[li].data[k];
      leaves[li].data[k] = x0 + h;
      const double up = loss();
      leaves[li].data[k] = x0 - h;
      const double dn = loss();
      leaves[li].data[k] = x0;
      fd[k] = (up - dn) / (2.0 * h);
    }
    worst = std::max(worst, rel_error(analytic[li], fd));
  }
  return worst;
}

/// Gradient of a loss w.r.t. its logits against central differences.
inline double check_loss(Tensor logits, const std::function<nn::LossResult(const Tensor&)>& f, double h = 1e-5) {
  const auto an = f(logits).grad.data;
  std::vector<double> fd(logits.numel());
  for (std::size_t k = 0; k < fd.size(); ++k) {
    const double x0 = logits.data[k];
    logits.data[k] = x0 + h;
    const double up = f(logits).value;
    logits.data[k] = x0 - h;
    const double dn = f(logits).value;
    logits.data[k] = x0;
    fd[k] = (up - dn) / (2.0 * h);
  }
  return rel_error(an, fd);
}

/// Full model forward + loss + backward in training mode against central
/// differences on up to `coords` sampled coordinates of every parameter.
inline double check_model(nn::ModelGraph& model, const nn::Batch& batch, const nn::LossFn& loss_fn,
                          std::mt19937_64& rng, std::size_t coords = 6, double h = 1e-5) {
  nn::ForwardOptions fo;
  auto loss = [&] {
    Tape t;
    return loss_fn(t.value(model.forward(t, batch.inputs, fo)), batch).value;
  };
  model.zero_grad();
  {
    Tape t;
    const auto out = model.forward(t, batch.inputs, fo);
    t.backward(out, loss_fn(t.value(out), batch).grad);
  }
  double worst = 0.0;
  for (auto& p : model.params) {
    std::vector<std::size_t> idx(p.value.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), coords));
    std::vector<double> an, fd;
    for (std::size_t k : idx) {
      const double x0 = p.value.data[k];
      p.value.data[k] = x0 + h;
      const double up = loss();
      p.value.data[k] = x0 - h;
      const double dn = loss();
      p.value.data[k] = x0;
      an.push_back(p.grad.data[k]);
      fd.push_back((up - dn) / (2.0 * h));
    }
    worst = std::max(worst, rel_error(an, fd));
  }
  return worst;
}

/// Binary tensor with at least one positive.
inline Tensor random_mask(Shape s, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::bernoulli_distribution b(0.4);
  for (double& v : t.data) v = b(rng) ? 1.0 : 0.0;
  t.data[0] = 1.0;
  return t;
}

/// Every layer type plus both losses over `trials` randomized small instances,
/// and a few whole-model checks.
inline std::vector<CaseResult> run_suite(int trials, std::uint64_t seed, double tol = 1e-4) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto sz = [](int v) { return static_cast<std::size_t>(v); };
  std::vector<CaseResult> out;
  auto run = [&](const std::string& name, const std::function<double()>& one) {
    CaseResult c{name};
    for (int i = 0; i < trials; ++i) {
      c.worst = std::max(c.worst, one());
      ++c.trials;
    }
    c.ok = c.worst <= tol;
    out.push_back(c);
  };

  run("conv2d", [&] {
    const int k = pick(0, 1) ? 3 : 1;
    const auto N = sz(pick(1, 2)), C = sz(pick(1, 3)), O = sz(pick(1, 3)), H = sz(pick(2, 5)), W = sz(pick(2, 5));
    const auto K = sz(k);
    return check_op({random_tensor({N, C, H, W}, rng), random_tensor({O, C, K, K}, rng), random_tensor({O}, rng)},
                    [k](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::conv2d(t, v[0], v[1], v[2], (k - 1) / 2); },
                    rng);
  });
  run("dense", [&] {
    const auto N = sz(pick(1, 3)), O = sz(pick(1, 4));
    const bool image = pick(0, 1) == 1;
    Shape xs = image ? Shape{N, sz(pick(1, 2)), sz(pick(1, 3)), sz(pick(1, 3))} : Shape{N, sz(pick(1, 6))};
    const std::size_t F = nn::shape_numel(xs) / N;
    return check_op({random_tensor(xs, rng), random_tensor({O, F}, rng), random_tensor({O}, rng)},
                    [](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::dense(t, v[0], v[1], v[2]); }, rng);
  });
  run("batchnorm-train", [&] {
    const auto N = sz(pick(2, 3)), C = sz(pick(1, 3)), H = sz(pick(1, 3)), W = sz(pick(2, 3));
    nn::BatchNormState st(C);
    return check_op({random_tensor({N, C, H, W}, rng), random_tensor({C}, rng, 0.5, 1.5), random_tensor({C}, rng)},
                    [&st](Tape& t, const std::vector<Tape::Id>& v) {
                      return nn::ops::batchnorm(t, v[0], v[1], v[2], st, true);
                    },
                    rng);
  });
  run("batchnorm-eval", [&] {
    const auto N = sz(pick(1, 3)), C = sz(pick(1, 3)), H = sz(pick(1, 3)), W = sz(pick(1, 3));
    nn::BatchNormState st(C);
    st.running_mean = random_tensor({C}, rng);
    st.running_var = random_tensor({C}, rng, 0.5, 2.0);
    return check_op({random_tensor({N, C, H, W}, rng), random_tensor({C}, rng, 0.5, 1.5), random_tensor({C}, rng)},
                    [&st](Tape& t, const std::vector<Tape::Id>& v) {
                      return nn::ops::batchnorm(t, v[0], v[1], v[2], st, false);
                    },
                    rng);
  });
  run("relu", [&] {
    Tensor x = random_tensor({sz(pick(1, 2)), sz(pick(1, 3)), sz(pick(1, 4)), sz(pick(1, 4))}, rng);
    for (double& v : x.data) v = (v < 0 ? -0.05 : 0.05) + v;  // keep clear of the kink
    return check_op({x}, [](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::relu(t, v[0]); }, rng);
  });
  run("maxpool2", [&] {
    const Shape s{sz(pick(1, 2)), sz(pick(1, 2)), sz(2 * pick(1, 3)), sz(2 * pick(1, 3))};
    Tensor x(s);
    std::vector<double> levels(x.numel());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
    std::shuffle(levels.begin(), levels.end(), rng);
    x.data.assign(levels.begin(), levels.end());  // distinct values, gaps far wider than the FD step
    return check_op({x}, [](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::maxpool2(t, v[0]); }, rng);
  });
  run("upsample2", [&] {
    return check_op({random_tensor({sz(pick(1, 2)), sz(pick(1, 2)), sz(pick(1, 4)), sz(pick(1, 4))}, rng)},
                    [](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::upsample2(t, v[0]); }, rng);
  });
  run("concat", [&] {
    const auto N = sz(pick(1, 2)), H = sz(pick(1, 3)), W = sz(pick(1, 3));
    return check_op({random_tensor({N, sz(pick(1, 3)), H, W}, rng), random_tensor({N, sz(pick(1, 3)), H, W}, rng)},
                    [](Tape& t, const std::vector<Tape::Id>& v) { return nn::ops::concat(t, v[0], v[1]); }, rng);
  });
  run("jaccard-bce-loss", [&] {
    const Shape s{sz(pick(1, 3)), 1, sz(pick(1, 4)), sz(pick(1, 4))};
    const Tensor target = random_mask(s, rng);
    return check_loss(random_tensor(s, rng, -3.0, 3.0),
                      [&](const Tensor& z) { return models::jaccard_bce_loss(z, target); });
  });
  run("softmax-cross-entropy", [&] {
    const auto N = sz(pick(1, 4)), K = sz(pick(2, 5));
    std::vector<int> labels;
    for (std::size_t n = 0; n < N; ++n) labels.push_back(pick(0, static_cast<int>(K) - 1));
    return check_loss(random_tensor({N, K}, rng, -3.0, 3.0),
                      [&](const Tensor& z) { return models::softmax_cross_entropy(z, labels); });
  });

  // Composite graphs: a few instances each, sampled coordinates.
  const int model_trials = std::max(1, trials / 25);
  CaseResult seg{"model-toy-seg"}, cls{"model-toy-cls"};
  for (int i = 0; i < model_trials; ++i) {
    models::ToySpec sp;
    sp.kind = models::ToyKind::Segmentation;
    sp.in_channels = 2;
    sp.width = 2;
    sp.scales = 2;
    auto g = models::build_toy_cnn(sp);
    g.init_parameters(seed + static_cast<std::uint64_t>(i));
    nn::Batch b;
    b.inputs = random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0);
    b.targets = random_mask({2, 1, 8, 8}, rng);
    seg.worst = std::max(seg.worst, check_model(g, b,
                                                [](const Tensor& o, const nn::Batch& bb) {
                                                  return models::jaccard_bce_loss(o, bb.targets);
                                                },
                                                rng));
    ++seg.trials;

    sp.kind = models::ToyKind::Classifier;
    sp.in_channels = 1;
    sp.classes = 3;
    sp.input_size = 8;
    auto c = models::build_toy_cnn(sp);
    c.init_parameters(seed + 100 + static_cast<std::uint64_t>(i));
    nn::Batch cb;
    cb.inputs = random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    cb.labels = {0, 1, 2};
    cls.worst = std::max(cls.worst, check_model(c, cb,
                                                [](const Tensor& o, const nn::Batch& bb) {
                                                  return models::softmax_cross_entropy(o, bb.labels);
                                                },
                                                rng));
    ++cls.trials;
  }
  seg.ok = seg.worst <= tol;
  cls.ok = cls.worst <= tol;
  out.push_back(seg);
  out.push_back(cls);
  return out;
}

}  // namespace mfq::gradcheck
