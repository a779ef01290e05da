#include "mfq/models/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "mfq/error.hpp"

namespace mfq::models {

using nn::Shape;
using nn::Tensor;

namespace {

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), salt};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kLayoutSalt = 0x1a7u;
constexpr std::uint32_t kRenderSalt = 0x2b8u;
constexpr std::uint32_t kAugmentSalt = 0x3c9u;
constexpr std::uint32_t kShuffleSalt = 0x4dau;

}  // namespace

bool covers(const ShipGeometry& g, std::size_t x, std::size_t y) {
  const double px = static_cast<double>(x) + 0.5 - g.cx;
  const double py = static_cast<double>(y) + 0.5 - g.cy;
  if (g.shape == ShipShape::Rectangle) return std::fabs(px) <= g.rx && std::fabs(py) <= g.ry;
  return (px * px) / (g.rx * g.rx) + (py * py) / (g.ry * g.ry) <= 1.0;
}

void SyntheticShipConfig::validate() const {
  if (image_size < 4 || channels < 1) throw InvalidArgument("synthetic: image size >= 4 and channels >= 1 required");
  if (min_objects < 0 || max_objects < min_objects) throw InvalidArgument("synthetic: empty object count range");
  if (!(min_half_size > 0.0) || max_half_size < min_half_size) {
    throw InvalidArgument("synthetic: empty object size range");
  }
  if (noise < 0.0 || brightness_jitter < 0.0 || contrast_jitter < 0.0 || contrast_jitter >= 1.0) {
    throw InvalidArgument("synthetic: bad noise / jitter setting");
  }
  if (crop_size < 0 || crop_size > image_size) throw InvalidArgument("synthetic: crop size out of range");
}

std::vector<ShipGeometry> synthetic_layout(const SyntheticShipConfig& cfg, std::size_t index) {
  cfg.validate();
  auto rng = keyed_rng(cfg.seed, index, 0, kLayoutSalt);
  std::uniform_int_distribution<int> count(cfg.min_objects, cfg.max_objects);
  std::uniform_real_distribution<double> half(cfg.min_half_size, cfg.max_half_size);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(cfg.image_size));
  std::uniform_real_distribution<double> bright(0.45, 0.9);
  std::bernoulli_distribution ellipse(0.5);
  std::vector<ShipGeometry> out(static_cast<std::size_t>(count(rng)));
  for (auto& g : out) {
    g.shape = ellipse(rng) ? ShipShape::Ellipse : ShipShape::Rectangle;
    g.rx = half(rng);
    g.ry = half(rng);
    g.cx = pos(rng);
    g.cy = pos(rng);
    g.brightness = bright(rng);
  }
  return out;
}

SegmentationSample synthetic_sample(const SyntheticShipConfig& cfg, std::size_t index) {
  const auto layout = synthetic_layout(cfg, index);
  auto rng = keyed_rng(cfg.seed, index, 0, kRenderSalt);
  std::uniform_real_distribution<double> bg_level(0.05, 0.3);
  std::uniform_real_distribution<double> tint(-0.05, 0.05);
  std::normal_distribution<double> noise(0.0, cfg.noise > 0.0 ? cfg.noise : 1.0);

  const auto S = static_cast<std::size_t>(cfg.image_size);
  const auto C = static_cast<std::size_t>(cfg.channels);
  SegmentationSample s{Tensor(Shape{C, S, S}), Tensor(Shape{1, S, S})};
  const double bg = bg_level(rng);
  std::vector<double> tints(C);
  for (auto& t : tints) t = tint(rng);

  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      double level = bg;
      bool inside = false;
      for (const auto& g : layout) {
        if (covers(g, x, y)) {
          inside = true;
          level = std::max(level, g.brightness);
        }
      }
      s.mask.data[y * S + x] = inside ? 1.0 : 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double n = cfg.noise > 0.0 ? noise(rng) : 0.0;
        s.image.data[(c * S + y) * S + x] = std::clamp(level + tints[c] + n, 0.0, 1.0);
      }
    }
  }
  return s;
}

std::vector<SegmentationSample> gen_synthetic_segmentation(const SyntheticShipConfig& cfg, long n,
                                                           std::size_t first) {
  if (n <= 0) throw InvalidArgument("gen_synthetic_segmentation: n must be positive");
  cfg.validate();
  std::vector<SegmentationSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out.push_back(synthetic_sample(cfg, first + static_cast<std::size_t>(i)));
  return out;
}

SegmentationSample augment(const SegmentationSample& s, const SyntheticShipConfig& cfg, std::uint64_t seed,
                           std::size_t index, int epoch) {
  auto rng = keyed_rng(seed, index, static_cast<std::uint64_t>(epoch), kAugmentSalt);
  std::bernoulli_distribution coin(0.5);
  const bool hflip = cfg.flips && coin(rng);
  const bool vflip = cfg.flips && coin(rng);
  const std::size_t C = s.image.dim(0), H = s.image.dim(1), W = s.image.dim(2);
  std::size_t ch = H, cw = W, oy = 0, ox = 0;
  if (cfg.crop_size > 0 && static_cast<std::size_t>(cfg.crop_size) < std::min(H, W)) {
    ch = cw = static_cast<std::size_t>(cfg.crop_size);
    oy = std::uniform_int_distribution<std::size_t>(0, H - ch)(rng);
    ox = std::uniform_int_distribution<std::size_t>(0, W - cw)(rng);
  }
  const double shift = cfg.brightness_jitter > 0.0
                           ? std::uniform_real_distribution<double>(-cfg.brightness_jitter, cfg.brightness_jitter)(rng)
                           : 0.0;
  const double contrast =
      cfg.contrast_jitter > 0.0
          ? std::uniform_real_distribution<double>(1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter)(rng)
          : 1.0;

  SegmentationSample out{Tensor(Shape{C, ch, cw}), Tensor(Shape{1, ch, cw})};
  for (std::size_t y = 0; y < ch; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      const std::size_t sy = oy + (vflip ? ch - 1 - y : y);
      const std::size_t sx = ox + (hflip ? cw - 1 - x : x);
      out.mask.data[y * cw + x] = s.mask.data[sy * W + sx];
      for (std::size_t c = 0; c < C; ++c) out.image.data[(c * ch + y) * cw + x] = s.image.data[(c * H + sy) * W + sx];
    }
  }
  double mean = 0.0;
  for (double v : out.image.data) mean += v;
  mean /= static_cast<double>(out.image.numel());
  for (double& v : out.image.data) v = std::clamp((v - mean) * contrast + mean + shift, 0.0, 1.0);
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto rng = keyed_rng(seed, static_cast<std::uint64_t>(epoch), 0, kShuffleSalt);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

nn::Batch make_batch(const std::vector<SegmentationSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("make_batch: empty batch");
  const auto& first = samples.at(indices[0]);
  const std::size_t C = first.image.dim(0), H = first.image.dim(1), W = first.image.dim(2);
  nn::Batch b;
  b.inputs = Tensor(Shape{indices.size(), C, H, W});
  b.targets = Tensor(Shape{indices.size(), 1, H, W});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = samples.at(indices[k]);
    if (s.image.shape != first.image.shape || s.mask.shape != first.mask.shape) {
      throw ShapeError("make_batch: samples of different shapes");
    }
    std::copy(s.image.data.begin(), s.image.data.end(), b.inputs.data.begin() + static_cast<long>(k * C * H * W));
    std::copy(s.mask.data.begin(), s.mask.data.end(), b.targets.data.begin() + static_cast<long>(k * H * W));
  }
  return b;
}

// --- Netpbm ---------------------------------------------------------------

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::string& file) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError(file + ": truncated netpbm header");
  return tok;
}

int header_int(std::istream& in, const std::string& file) {
  const std::string t = header_token(in, file);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9) {
    throw FormatError(file + ": bad netpbm header field '" + t + "'");
  }
  return std::stoi(t);
}

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string file = path.string();
  PnmImage img;
  const std::string magic = header_token(in, file);
  if (magic == "P6") {
    img.channels = 3;
  } else if (magic == "P5") {
    img.channels = 1;
  } else {
    throw FormatError(file + ": unsupported netpbm magic '" + magic + "'");
  }
  img.width = header_int(in, file);
  img.height = header_int(in, file);
  img.maxval = header_int(in, file);
  if (img.width <= 0 || img.height <= 0) throw FormatError(file + ": empty image");
  if (img.maxval <= 0 || img.maxval > 255) throw FormatError(file + ": only 8-bit netpbm is supported");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError(file + ": truncated raster");
  return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n" << img.maxval << "\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ImageMaskDirStream::ImageMaskDirStream(const std::filesystem::path& dir) : dir_(dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::set<std::string> images, masks;
  const std::string mask_suffix = ".mask.pgm";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > mask_suffix.size() && name.ends_with(mask_suffix)) {
      masks.insert(name.substr(0, name.size() - mask_suffix.size()));
    } else if (name.size() > 4 && name.ends_with(".ppm")) {
      images.insert(name.substr(0, name.size() - 4));
    }
  }
  for (const auto& n : images) {
    if (!masks.contains(n)) throw IoError("image " + n + ".ppm has no mask " + n + mask_suffix);
  }
  for (const auto& n : masks) {
    if (!images.contains(n)) throw IoError("mask " + n + mask_suffix + " has no image " + n + ".ppm");
  }
  names_.assign(images.begin(), images.end());  // std::set keeps lexicographic order
}

std::optional<SegmentationSample> ImageMaskDirStream::next() {
  if (pos_ >= names_.size()) return std::nullopt;
  const std::string& n = names_[pos_++];
  const PnmImage img = read_pnm(dir_ / (n + ".ppm"));
  const PnmImage msk = read_pnm(dir_ / (n + ".mask.pgm"));
  if (img.channels != 3) throw FormatError(n + ".ppm: expected a P6 image");
  if (msk.channels != 1) throw FormatError(n + ".mask.pgm: expected a P5 mask");
  if (img.width != msk.width || img.height != msk.height) {
    throw FormatError(n + ": image and mask dimensions differ");
  }
  const auto H = static_cast<std::size_t>(img.height), W = static_cast<std::size_t>(img.width);
  SegmentationSample s{Tensor(Shape{3, H, W}), Tensor(Shape{1, H, W})};
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        s.image.data[(c * H + y) * W + x] =
            static_cast<double>(img.pixels[(y * W + x) * 3 + c]) / static_cast<double>(img.maxval);
      }
      s.mask.data[y * W + x] = msk.pixels[y * W + x] > 127 ? 1.0 : 0.0;
    }
  }
  return s;
}

std::vector<SegmentationSample> load_image_mask_dir(const std::filesystem::path& dir) {
  ImageMaskDirStream stream(dir);
  std::vector<SegmentationSample> out;
  while (auto s = stream.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace mfq::models
