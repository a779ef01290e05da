#pragma once

#include <span>
#include <vector>

#include "mfq/nn/qat.hpp"
#include "mfq/nn/tensor.hpp"

namespace mfq::models {

/// Mean binary cross-entropy with logits plus (1 - soft Jaccard).
///
/// The Jaccard term is taken over the whole batch:
/// J = (sum p*t + eps) / (sum p + sum t - sum p*t + eps), p = sigmoid(logits).
nn::LossResult jaccard_bce_loss(const nn::Tensor& logits, const nn::Tensor& targets, double eps = 1.0);

/// Mean softmax cross-entropy over rows of (N, K) logits.
nn::LossResult softmax_cross_entropy(const nn::Tensor& logits, std::span<const int> labels);

/// Binary mask from logits: 1 where sigmoid(logit) > 0.5.
nn::Tensor predict_mask(const nn::Tensor& logits);

/// Per-image IoU of binary masks averaged over the batch. Images whose
/// union is empty score 1.
double mean_iou(const nn::Tensor& pred_mask, const nn::Tensor& target);

/// Per-image IoU values (same conventions as mean_iou).
std::vector<double> iou_per_image(const nn::Tensor& pred_mask, const nn::Tensor& target);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double top1_accuracy(const nn::Tensor& logits, std::span<const int> labels);

}  // namespace mfq::models
