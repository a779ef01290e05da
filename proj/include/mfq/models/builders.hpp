#pragma once

#include <string>

#include "mfq/nn/graph.hpp"

namespace mfq::models {

/// Thin U-Net 32: five encoder stages, five decoder stages, every 3x3 conv
/// 32 channels wide, a final 1x1 conv to one logit channel.
///
/// Encoder stage k (k > 1) max-pools its input, so there are five
/// resolution scales and inputs must be divisible by 16. Decoder stage 5
/// runs at the bottom scale on the stage-5 encoder output; decoder stages
/// 4..1 upsample x2, concatenate the encoder output of the same scale
/// (32 + 32 channels), then apply two conv+BN+ReLU groups.
nn::ModelGraph build_thin_unet32(int in_channels, const nn::QuantAttachment& quant = {});

enum class ToyKind { Segmentation, Classifier };

struct ToySpec {
  ToyKind kind = ToyKind::Segmentation;
  int in_channels = 3;
  int width = 8;       ///< channels at full resolution; doubled per scale
  int scales = 2;      ///< resolution scales of the encoder-decoder / conv stages of the classifier
  int classes = 10;    ///< classifier only
  int input_size = 16; ///< classifier only: square input side
};

/// Small encoder-decoder (segmentation) or conv classifier built from the
/// same layer vocabulary as the U-Net.
nn::ModelGraph build_toy_cnn(const ToySpec& spec, const nn::QuantAttachment& quant = {});

/// "thin-unet32:c=3", "toy-seg:c=3,w=8,s=2", "toy-cls:c=1,w=8,s=2,k=10,h=16".
nn::ModelGraph build_from_spec(const std::string& spec);

/// Channel widths of every 3x3 conv, in layer order.
std::vector<int> conv3x3_widths(const nn::ModelGraph& g);

}  // namespace mfq::models
