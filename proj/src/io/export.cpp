#include "mfq/io/export.hpp"

#include <fstream>
#include <sstream>

#include "mfq/error.hpp"
#include "mfq/numeric/codec.hpp"
#include "mfq/numeric/quantize.hpp"

namespace mfq::io {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "mfq-export";
constexpr int kVersion = 1;

std::size_t packed_size(std::size_t count, int width) { return (count * static_cast<std::size_t>(width) + 7) / 8; }

}  // namespace

std::vector<std::uint8_t> pack_codewords(std::span<const std::uint32_t> codes, int width) {
  if (width < 1 || width > 32) throw InvalidArgument("codeword width must be in [1, 32]");
  std::vector<std::uint8_t> out(packed_size(codes.size(), width), 0);
  std::size_t bit = 0;
  for (std::uint32_t c : codes) {
    if (width < 32 && (c >> width) != 0) throw InvalidArgument("codeword wider than the format");
    for (int b = width - 1; b >= 0; --b, ++bit) {
      if ((c >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint32_t> unpack_codewords(std::span<const std::uint8_t> bytes, int width, std::size_t count) {
  if (width < 1 || width > 32) throw InvalidArgument("codeword width must be in [1, 32]");
  if (bytes.size() < packed_size(count, width)) throw FormatError("packed payload too short");
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bit = 0;
  for (auto& c : out) {
    for (int b = 0; b < width; ++b, ++bit) c = (c << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
  }
  return out;
}

std::vector<double> ExportedTensor::values() const {
  std::vector<double> v;
  v.reserve(codes.size());
  for (auto c : codes) v.push_back(num::decode(num::Codeword{c}, format, bias));
  return v;
}

std::size_t ExportedTensor::payload_bytes() const { return packed_size(codes.size(), format.width()); }

std::vector<ExportedTensor> quantized_weights(const nn::ModelGraph& model) {
  std::vector<ExportedTensor> out;
  for (const auto& l : model.layers) {
    if (l.kind != nn::LayerKind::Conv && l.kind != nn::LayerKind::Dense) continue;
    const auto& p = model.params[l.weight];
    if (l.attachment < 0) continue;
    const auto& a = model.attachments[l.attachment];
    if (!a.enabled) throw InvalidArgument("layer " + l.name + " has no calibrated exponent bias; run calibration first");
    ExportedTensor t;
    t.name = p.name;
    t.format = a.weight_q.format;
    t.bias = a.weight_q.bias();
    t.shape = p.value.shape;
    t.codes.reserve(p.value.numel());
    for (double w : p.value.data) {
      const double q = num::quantize_scalar(w, t.format, t.bias);
      t.codes.push_back(num::encode(q, t.format, t.bias).bits);
    }
    out.push_back(std::move(t));
  }
  if (out.empty()) throw InvalidArgument("model has no quantized weight tensors");
  return out;
}

ExportSummary write_export(const std::vector<ExportedTensor>& tensors, const fs::path& path) {
  std::ostringstream m;
  m << kMagic << " " << kVersion << "\n";
  ExportSummary s;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    m << "tensor " << t.name << " format=" << t.format.to_string() << " bias=" << t.bias
      << " count=" << t.codes.size() << " shape=" << nn::shape_str(t.shape) << " offset=" << offset
      << " bytes=" << t.payload_bytes() << "\n";
    offset += t.payload_bytes();
    s.elements += t.codes.size();
  }
  m << "payload " << offset << "\nend\n";
  const std::string head = m.str();
  s.tensors = tensors.size();
  s.payload_bytes = offset;
  s.manifest_bytes = head.size();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& t : tensors) {
      const auto bytes = pack_codewords(t.codes, t.format.width());
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
  return s;
}

ExportSummary export_quantized(const nn::ModelGraph& model, const fs::path& path) {
  return write_export(quantized_weights(model), path);
}

std::vector<ExportedTensor> load_export(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("export not found: " + path.string());
  const std::string where = path.string() + ": ";
  std::string line, word;
  std::getline(in, line);
  {
    std::istringstream is(line);
    int version = 0;
    is >> word >> version;
    if (word != kMagic || version != kVersion) throw FormatError(where + "not a version-1 export");
  }
  struct Row {
    ExportedTensor t;
    std::size_t count, offset, bytes;
  };
  std::vector<Row> rows;
  std::size_t payload = 0;
  bool ended = false;
  while (!ended && std::getline(in, line)) {
    std::istringstream is(line);
    is >> word;
    if (word == "tensor") {
      Row r{};
      is >> r.t.name;
      std::string tok;
      while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError(where + "bad token '" + tok + "'");
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "format") {
          r.t.format = num::MinifloatFormat::parse(v);
        } else if (k == "bias") {
          r.t.bias = std::stoi(v);
        } else if (k == "count") {
          r.count = std::stoul(v);
        } else if (k == "offset") {
          r.offset = std::stoul(v);
        } else if (k == "bytes") {
          r.bytes = std::stoul(v);
        } else if (k == "shape") {
          // "(a,b,c)"
          std::istringstream ss(v.substr(1, v.size() - 2));
          std::string d;
          while (std::getline(ss, d, ',')) r.t.shape.push_back(std::stoul(d));
        } else {
          throw FormatError(where + "unknown field '" + k + "'");
        }
      }
      if (r.bytes != packed_size(r.count, r.t.format.width()) || nn::shape_numel(r.t.shape) != r.count) {
        throw FormatError(where + "inconsistent sizes for " + r.t.name);
      }
      rows.push_back(std::move(r));
    } else if (word == "payload") {
      is >> payload;
    } else if (word == "end") {
      ended = true;
    } else {
      throw FormatError(where + "unknown manifest line '" + word + "'");
    }
  }
  if (!ended) throw FormatError(where + "truncated manifest");
  std::vector<std::uint8_t> bytes(payload);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(in.gcount()) != payload) throw FormatError(where + "truncated payload");

  std::vector<ExportedTensor> out;
  for (auto& r : rows) {
    if (r.offset + r.bytes > payload) throw FormatError(where + r.t.name + " lies outside the payload");
    r.t.codes = unpack_codewords(std::span(bytes).subspan(r.offset, r.bytes), r.t.format.width(), r.count);
    out.push_back(std::move(r.t));
  }
  return out;
}

}  // namespace mfq::io
