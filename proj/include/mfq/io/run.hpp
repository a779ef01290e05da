#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "mfq/io/checkpoint.hpp"
#include "mfq/io/config.hpp"
#include "mfq/models/train.hpp"
#include "mfq/nn/qat.hpp"

namespace mfq::io {

struct Datasets {
  models::Dataset train;
  models::Dataset test;
};

/// Train / test sets of the configured task. Synthetic segmentation draws
/// test samples from indices after the training ones.
Datasets make_datasets(const RunConfig& cfg);

struct RunHooks {
  std::ostream* log = nullptr;  ///< progress lines, if set
  int stop_after_epoch = -1;    ///< stop once this many epochs of the phase are done (for resume tests)
};

/// Full-precision training from scratch, or resumed from cfg.checkpoint
/// when `resume` is set and the file exists. Saves the checkpoint and
/// rewrites the metrics file after every epoch.
RunState run_train(const RunConfig& cfg, const Datasets& data, bool resume, const RunHooks& hooks = {});

/// Loads cfg.pretrained, runs warm-up calibration and sets every exponent
/// bias (learned, or the fixed value in fixed mode), then saves a phase
/// "qat" epoch-0 checkpoint to cfg.checkpoint.
nn::CalibrationResult run_calibrate(const RunConfig& cfg, const Datasets& data, const RunHooks& hooks = {});

/// QAT fine-tune: calibrates from cfg.pretrained (or resumes a "qat"
/// checkpoint) and trains cfg.finetune_epochs epochs.
RunState run_qat_finetune(const RunConfig& cfg, const Datasets& data, bool resume, const RunHooks& hooks = {});

/// Test metric (mean IoU or top-1) of a saved checkpoint.
double run_eval(const std::filesystem::path& checkpoint, const RunConfig& cfg, const Datasets& data);

/// One `key=value` metrics record.
std::string metrics_line(const MetricRecord& r);

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& history);

}  // namespace mfq::io
