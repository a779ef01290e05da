#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "mfq/models/data.hpp"
#include "mfq/nn/optim.hpp"
#include "mfq/numeric/format.hpp"
#include "mfq/numeric/quantize.hpp"

namespace mfq::io {

enum class Task { SyntheticSeg, DirSeg, SanityClassify };
enum class BiasMode { Learned, Fixed };

/// Everything a run needs, readable from one `key = value` file with
/// `[section]` headers. Every field has a default and is written back by
/// to_text(), so a saved config reproduces the run on its own.
struct RunConfig {
  // [run]
  Task task = Task::SyntheticSeg;
  std::string model = "toy-seg:c=3,w=8,s=2";
  std::uint64_t seed = 1;
  int epochs = 10;
  int batch_size = 16;
  int eval_batch_size = 32;
  std::string checkpoint = "run.ckpt";
  std::string pretrained = "pretrained.ckpt";
  std::string metrics = "metrics.txt";
  std::string log = "train.log";

  // [data]
  int train_samples = 512;
  int test_samples = 128;
  models::SyntheticShipConfig synthetic{};
  bool augment = false;
  std::string data_dir;
  int classes = 10;

  // [quant]
  num::MinifloatFormat weights{3, 2};
  num::MinifloatFormat activations{3, 2};
  BiasMode bias_mode = BiasMode::Learned;
  std::optional<int> fixed_bias;  ///< unset: 2^(e-1)
  num::BiasInit init = num::BiasInit::Centered;
  int warmup_iterations = 200;
  bool ste_clip_zero = false;
  int finetune_epochs = 5;
  double finetune_lr = 1e-4;

  // [optim]
  nn::OptimConfig optim{};

  /// Optimizer settings for the QAT fine-tune phase.
  nn::OptimConfig finetune_optim() const;

  /// Integer bias of the fixed-bias mode for a format.
  int fixed_bias_for(const num::MinifloatFormat& f) const;

  void validate() const;
};

/// Parses a config; unknown sections or keys, duplicates and bad values throw
/// FormatError naming the source and line.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Serializes every field, including defaults.
std::string to_text(const RunConfig& cfg);

/// Applies one `section.key=value` override.
void set_option(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "MFQ_CONFIG";

/// Config path from --config, else $MFQ_CONFIG, else none.
std::optional<std::filesystem::path> default_config_path();

std::string to_string(Task t);
std::string to_string(BiasMode m);

}  // namespace mfq::io
