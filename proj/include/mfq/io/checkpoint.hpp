#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfq/nn/graph.hpp"
#include "mfq/nn/optim.hpp"

namespace mfq::io {

/// One line of the metrics history.
struct MetricRecord {
  int epoch = 0;
  std::string phase;  ///< "fp" or "qat"
  double loss = 0.0;
  double metric = 0.0;
  double lr = 0.0;
  std::vector<double> weight_E0;
  std::vector<double> activation_E0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// Where a run stands, besides the model and optimizer.
struct RunState {
  std::string phase = "fp";
  int epoch = 0;  ///< completed epochs of the current phase
  std::uint64_t seed = 0;
  std::vector<MetricRecord> history;
};

struct Checkpoint {
  nn::ModelGraph model;
  long optim_steps = 0;
  double optim_lr = 0.0;
  std::vector<std::vector<double>> optim_slots;
  RunState state;
};

inline constexpr int kCheckpointVersion = 1;

/// Text manifest followed by a little-endian f64 blob. The manifest lists
/// every tensor with its byte offset and the blob's FNV-1a checksum. Written
/// to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const nn::ModelGraph& model, const nn::Optimizer& optim,
                     const RunState& state);

/// Rebuilds the model from its spec and loads every tensor. Throws IoError
/// when the file is missing, FormatError on version, layout or checksum errors.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Restores optimizer slots and counters saved by save_checkpoint.
void restore_optimizer(nn::Optimizer& optim, const Checkpoint& ck);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

/// Bit-exact text form of a double (hex float).
std::string hex_double(double v);
double parse_hex_double(const std::string& s);

}  // namespace mfq::io
