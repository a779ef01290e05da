#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfq/nn/graph.hpp"
#include "mfq/numeric/format.hpp"

namespace mfq::io {

/// Packs codewords of `width` bits MSB-first; the last byte is zero padded.
std::vector<std::uint8_t> pack_codewords(std::span<const std::uint32_t> codes, int width);

/// Inverse of pack_codewords. Throws FormatError if `bytes` is too short.
std::vector<std::uint32_t> unpack_codewords(std::span<const std::uint8_t> bytes, int width, std::size_t count);

struct ExportedTensor {
  std::string name;
  num::MinifloatFormat format;
  int bias = 0;
  nn::Shape shape;
  std::vector<std::uint32_t> codes;

  /// Decoded real values.
  std::vector<double> values() const;
  std::size_t payload_bytes() const;
};

struct ExportSummary {
  std::size_t tensors = 0;
  std::size_t elements = 0;
  std::size_t payload_bytes = 0;   ///< packed codewords, per-tensor padded
  std::size_t manifest_bytes = 0;
};

/// Quantized weight tensors of every enabled quantizer, codewords of
/// quantize(master, fmt, E0). Throws InvalidArgument when a quantizable layer
/// has no active quantizer (bias unset).
std::vector<ExportedTensor> quantized_weights(const nn::ModelGraph& model);

/// Text manifest (one line per tensor) then the concatenated packed payloads.
ExportSummary export_quantized(const nn::ModelGraph& model, const std::filesystem::path& path);
ExportSummary write_export(const std::vector<ExportedTensor>& tensors, const std::filesystem::path& path);

std::vector<ExportedTensor> load_export(const std::filesystem::path& path);

}  // namespace mfq::io
