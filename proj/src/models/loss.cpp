#include "mfq/models/loss.hpp"

#include <cmath>

#include "mfq/error.hpp"

namespace mfq::models {

using nn::Tensor;

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(what) + ": shape " + nn::shape_str(a.shape) + " vs " + nn::shape_str(b.shape));
  }
}

void require_binary(const Tensor& t, const char* what) {
  for (double v : t.data) {
    if (v != 0.0 && v != 1.0) throw InvalidArgument(std::string(what) + ": targets must be 0 or 1");
  }
}

}  // namespace

nn::LossResult jaccard_bce_loss(const Tensor& logits, const Tensor& targets, double eps) {
  require_same(logits, targets, "jaccard_bce_loss");
  require_binary(targets, "jaccard_bce_loss");
  const std::size_t n = logits.numel();
  if (n == 0) throw InvalidArgument("jaccard_bce_loss: empty tensors");
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> p(n);
  double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.data[i], t = targets.data[i];
    p[i] = sigmoid(z);
    bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
    inter += p[i] * t;
    sum_p += p[i];
    sum_t += t;
  }
  const double uni = sum_p + sum_t - inter + eps;
  const double jac = (inter + eps) / uni;

  nn::LossResult r;
  r.value = bce * inv_n + (1.0 - jac);
  r.grad = Tensor(logits.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = targets.data[i];
    // dJ/dp = (t * U - (I + eps) * (1 - t)) / U^2
    const double dj_dp = (t * uni - (inter + eps) * (1.0 - t)) / (uni * uni);
    r.grad.data[i] = (p[i] - t) * inv_n - dj_dp * p[i] * (1.0 - p[i]);
  }
  return r;
}

nn::LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + nn::shape_str(logits.shape) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  nn::LossResult r;
  r.grad = Tensor(logits.shape);
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) throw InvalidArgument("label out of range");
    const double* z = logits.data.data() + n * K;
    double mx = z[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
    const double lse = mx + std::log(s);
    r.value += lse - z[labels[n]];
    for (std::size_t k = 0; k < K; ++k) {
      r.grad.data[n * K + k] = (std::exp(z[k] - lse) - (static_cast<int>(k) == labels[n] ? 1.0 : 0.0)) / N;
    }
  }
  r.value /= static_cast<double>(N);
  return r;
}

Tensor predict_mask(const Tensor& logits) {
  Tensor m(logits.shape);
  for (std::size_t i = 0; i < logits.numel(); ++i) m.data[i] = sigmoid(logits.data[i]) > 0.5 ? 1.0 : 0.0;
  return m;
}

std::vector<double> iou_per_image(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "mean_iou");
  if (pred.rank() < 1 || pred.dim(0) == 0) throw ShapeError("mean_iou: need at least one image");
  const std::size_t N = pred.dim(0), per = pred.numel() / N;
  std::vector<double> out;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const bool a = pred.data[i] > 0.5, b = target.data[i] > 0.5;
      inter += a && b;
      uni += a || b;
    }
    out.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni));
  }
  return out;
}

double mean_iou(const Tensor& pred, const Tensor& target) {
  const auto v = iou_per_image(pred, target);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double top1_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("top1_accuracy: logits " + nn::shape_str(logits.shape) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits.data[n * K + k] > logits.data[n * K + best]) best = k;
    }
    hits += static_cast<int>(best) == labels[n];
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

}  // namespace mfq::models
