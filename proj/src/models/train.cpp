#include "mfq/models/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "mfq/error.hpp"
#include "mfq/models/loss.hpp"

namespace mfq::models {

using nn::Shape;
using nn::Tensor;

Dataset gen_synthetic_classification(std::size_t n, int classes, int size, std::uint64_t seed) {
  if (n == 0 || classes < 2 || size < 8) throw InvalidArgument("synthetic classification: bad parameters");
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(classes))));
  const int cell = size / grid;
  if (cell < 3) throw InvalidArgument("synthetic classification: image too small for the class grid");
  Dataset d;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::uniform_int_distribution<int> jitter(0, std::max(0, cell - 3));
  std::normal_distribution<double> noise(0.0, 0.1);
  const auto S = static_cast<std::size_t>(size);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = cls(rng);
    SegmentationSample s{Tensor(Shape{1, S, S}), Tensor(Shape{1, S, S})};
    const int y0 = (k / grid) * cell + jitter(rng);
    const int x0 = (k % grid) * cell + jitter(rng);
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const bool on = static_cast<int>(y) >= y0 && static_cast<int>(y) < y0 + 3 && static_cast<int>(x) >= x0 &&
                        static_cast<int>(x) < x0 + 3;
        s.image.data[y * S + x] = std::clamp((on ? 0.8 : 0.1) + noise(rng), 0.0, 1.0);
      }
    }
    d.samples.push_back(std::move(s));
    d.labels.push_back(k);
  }
  return d;
}

nn::LossFn loss_for(const Dataset& data) {
  if (data.is_classification()) {
    return [](const Tensor& out, const nn::Batch& b) { return softmax_cross_entropy(out, b.labels); };
  }
  return [](const Tensor& out, const nn::Batch& b) { return jaccard_bce_loss(out, b.targets); };
}

nn::Batch epoch_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t b,
                      const EpochOptions& opt) {
  const auto bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  const std::size_t lo = b * bs, hi = std::min(order.size(), lo + bs);
  if (lo >= hi) throw InvalidArgument("epoch_batch: batch index out of range");
  std::vector<std::size_t> idx(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
  nn::Batch batch;
  if (opt.augment && !data.is_classification()) {
    std::vector<SegmentationSample> aug;
    std::vector<std::size_t> local;
    for (std::size_t i : idx) {
      aug.push_back(augment(data.samples.at(i), opt.augmentation, opt.seed, i, opt.epoch));
      local.push_back(local.size());
    }
    batch = make_batch(aug, local);
  } else {
    batch = make_batch(data.samples, idx);
  }
  if (data.is_classification()) {
    for (std::size_t i : idx) batch.labels.push_back(data.labels.at(i));
  }
  return batch;
}

double train_epoch(nn::ModelGraph& model, nn::Optimizer& optim, const Dataset& data, const EpochOptions& opt) {
  if (data.size() == 0) throw InvalidArgument("train_epoch: empty dataset");
  optim.set_epoch(opt.epoch);
  const auto order = epoch_order(data.size(), opt.seed, opt.epoch);
  const auto bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  const std::size_t batches = (order.size() + bs - 1) / bs;
  const nn::LossFn loss = loss_for(data);
  nn::StepOptions so;
  so.ste_clip_zero = opt.ste_clip_zero;
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    total += nn::qat_step(model, epoch_batch(data, order, b, opt), optim, loss, so);
  }
  return total / static_cast<double>(batches);
}

nn::BatchStream training_stream(const Dataset& data, EpochOptions opt) {
  if (data.size() == 0) {
    return [] { return std::optional<nn::Batch>{}; };
  }
  struct State {
    EpochOptions opt;
    std::vector<std::size_t> order;
    std::size_t next = 0;
  };
  auto st = std::make_shared<State>();
  st->opt = opt;
  st->order = epoch_order(data.size(), opt.seed, opt.epoch);
  return [&data, st]() -> std::optional<nn::Batch> {
    const auto bs = static_cast<std::size_t>(std::max(1, st->opt.batch_size));
    if (st->next * bs >= st->order.size()) {
      ++st->opt.epoch;
      st->order = epoch_order(data.size(), st->opt.seed, st->opt.epoch);
      st->next = 0;
    }
    return epoch_batch(data, st->order, st->next++, st->opt);
  };
}

double evaluate(nn::ModelGraph& model, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  nn::ForwardOptions fo;
  fo.training = false;
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  double hits = 0.0;
  for (std::size_t lo = 0; lo < data.size(); lo += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(data.size(), lo + bs); ++i) idx.push_back(i);
    nn::Batch b = make_batch(data.samples, idx);
    nn::Tape tape;
    const auto out = model.forward(tape, b.inputs, fo);
    const Tensor& y = tape.value(out);
    if (data.is_classification()) {
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      hits += top1_accuracy(y, labels) * static_cast<double>(idx.size());
    } else {
      for (double v : iou_per_image(predict_mask(y), b.targets)) hits += v;
    }
  }
  return hits / static_cast<double>(data.size());
}

}  // namespace mfq::models
