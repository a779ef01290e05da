#pragma once

#include <cstdint>
#include <vector>

#include "mfq/models/data.hpp"
#include "mfq/nn/qat.hpp"

namespace mfq::models {

/// Segmentation samples, or classification images with labels.
struct Dataset {
  std::vector<SegmentationSample> samples;  ///< mask unused for classification
  std::vector<int> labels;                  ///< non-empty for classification

  bool is_classification() const noexcept { return !labels.empty(); }
  std::size_t size() const noexcept { return samples.size(); }
};

/// Tiny classification task: class k is a bright square at the k-th cell of
/// a fixed grid, with positional jitter and pixel noise. Deterministic per seed.
Dataset gen_synthetic_classification(std::size_t n, int classes, int size, std::uint64_t seed);

struct EpochOptions {
  int epoch = 0;
  int batch_size = 16;
  std::uint64_t seed = 1;
  bool augment = false;
  SyntheticShipConfig augmentation{};
  bool ste_clip_zero = false;
};

nn::LossFn loss_for(const Dataset& data);

/// Batch `b` of an epoch in shuffled order, with optional augmentation.
nn::Batch epoch_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t b,
                      const EpochOptions& opt);

/// One pass over the shuffled training set; returns the mean batch loss.
double train_epoch(nn::ModelGraph& model, nn::Optimizer& optim, const Dataset& data, const EpochOptions& opt);

/// Endless batch stream walking epochs from opt.epoch onward.
nn::BatchStream training_stream(const Dataset& data, EpochOptions opt);

/// Mean IoU (segmentation) or top-1 accuracy (classification) in eval mode.
double evaluate(nn::ModelGraph& model, const Dataset& data, int batch_size = 32);

}  // namespace mfq::models
