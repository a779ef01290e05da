#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfq/nn/qat.hpp"
#include "mfq/nn/tensor.hpp"

namespace mfq::models {

/// Image (C, H, W) in [0, 1] and its binary mask (1, H, W).
struct SegmentationSample {
  nn::Tensor image;
  nn::Tensor mask;
};

enum class ShipShape { Rectangle, Ellipse };

/// Geometry of one object, in pixel coordinates. A pixel (x, y) is inside
/// when its center (x + 0.5, y + 0.5) is.
struct ShipGeometry {
  ShipShape shape = ShipShape::Rectangle;
  double cx = 0, cy = 0;  ///< center
  double rx = 0, ry = 0;  ///< half extents / radii
  double brightness = 0.8;
};

bool covers(const ShipGeometry& g, std::size_t x, std::size_t y);

struct SyntheticShipConfig {
  int image_size = 64;
  int channels = 3;
  int min_objects = 1;
  int max_objects = 3;
  double min_half_size = 2.0;
  double max_half_size = 8.0;
  double noise = 0.08;
  double brightness_jitter = 0.1;
  double contrast_jitter = 0.2;
  int crop_size = 0;  ///< 0 means no cropping
  bool flips = true;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Object layout of sample `index`; a pure function of (cfg, index).
std::vector<ShipGeometry> synthetic_layout(const SyntheticShipConfig& cfg, std::size_t index);

/// Sample `index` of the synthetic ship dataset.
SegmentationSample synthetic_sample(const SyntheticShipConfig& cfg, std::size_t index);

/// n samples, indices [first, first + n). Throws InvalidArgument for n <= 0.
std::vector<SegmentationSample> gen_synthetic_segmentation(const SyntheticShipConfig& cfg, long n,
                                                           std::size_t first = 0);

/// Flip / crop / brightness / contrast augmentation keyed by (seed, index, epoch).
SegmentationSample augment(const SegmentationSample& s, const SyntheticShipConfig& cfg, std::uint64_t seed,
                           std::size_t index, int epoch);

/// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Stacks samples into an (N, C, H, W) batch with (N, 1, H, W) targets.
nn::Batch make_batch(const std::vector<SegmentationSample>& samples, std::span<const std::size_t> indices);

// Netpbm I/O (binary, 8-bit).
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 0;  ///< 3 for P6, 1 for P5
  int maxval = 255;
  std::vector<std::uint8_t> pixels;
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& img);

/// Streams `<name>.ppm` / `<name>.mask.pgm` pairs in lexicographic basename order.
class ImageMaskDirStream {
 public:
  /// Scans the directory and checks pairing; throws IoError / FormatError.
  explicit ImageMaskDirStream(const std::filesystem::path& dir);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// Next sample, or nullopt at the end.
  std::optional<SegmentationSample> next();

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
  std::size_t pos_ = 0;
};

/// Loads every pair of a directory.
std::vector<SegmentationSample> load_image_mask_dir(const std::filesystem::path& dir);

}  // namespace mfq::models
