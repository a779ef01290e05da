#include "mfq/io/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <span>
#include <sstream>

#include "mfq/error.hpp"
#include "mfq/models/builders.hpp"

namespace mfq::io {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("bad real '" + s + "' in checkpoint");
  return v;
}

namespace {

constexpr const char* kMagic = "mfq-checkpoint";

void put_f64(std::vector<std::uint8_t>& blob, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string join_hex(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + hex_double(v[i]);
  return s.empty() ? "-" : s;
}

std::vector<double> split_hex(const std::string& s) {
  std::vector<double> out;
  if (s == "-") return out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_hex_double(item));
  return out;
}

// key=value tokens of one manifest line after its leading word.
std::map<std::string, std::string> kv_tokens(std::istringstream& is) {
  std::map<std::string, std::string> m;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("bad manifest token '" + tok + "'");
    m[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return m;
}

const std::string& need(const std::map<std::string, std::string>& m, const std::string& k) {
  auto it = m.find(k);
  if (it == m.end()) throw FormatError("checkpoint manifest misses field '" + k + "'");
  return it->second;
}

struct TensorRef {
  std::string name;
  std::span<const double> data;
};

}  // namespace

void save_checkpoint(const fs::path& path, const nn::ModelGraph& model, const nn::Optimizer& optim,
                     const RunState& state) {
  std::vector<TensorRef> tensors;
  for (const auto& p : model.params) tensors.push_back({"param:" + p.name, p.value.data});
  for (std::size_t i = 0; i < model.bn_states.size(); ++i) {
    tensors.push_back({"bn:" + std::to_string(i) + ":mean", model.bn_states[i].running_mean.data});
    tensors.push_back({"bn:" + std::to_string(i) + ":var", model.bn_states[i].running_var.data});
  }
  for (std::size_t i = 0; i < optim.slots().size(); ++i) {
    tensors.push_back({"slot:" + std::to_string(i), optim.slots()[i]});
  }

  std::vector<std::uint8_t> blob;
  std::ostringstream m;
  m << kMagic << " " << kCheckpointVersion << "\n";
  m << "model " << model.spec << "\n";
  m << "state phase=" << state.phase << " epoch=" << state.epoch << " seed=" << state.seed << "\n";
  m << "optimizer steps=" << optim.steps() << " lr=" << hex_double(optim.lr()) << " slots=" << optim.slots().size()
    << "\n";
  for (std::size_t i = 0; i < model.attachments.size(); ++i) {
    const auto& a = model.attachments[i];
    m << "quant index=" << i << " enabled=" << a.enabled << " qa=" << a.quantize_activation
      << " wfmt=" << a.weight_q.format.to_string() << " wE0=" << hex_double(a.weight_q.E0)
      << " wlearn=" << a.weight_q.learnable << " afmt=" << a.activation_q.format.to_string()
      << " aE0=" << hex_double(a.activation_q.E0) << " alearn=" << a.activation_q.learnable
      << " wmax=" << hex_double(a.observed_weight_max) << " amax=" << hex_double(a.observed_activation_max) << "\n";
  }
  for (const auto& r : state.history) {
    m << "metric epoch=" << r.epoch << " phase=" << r.phase << " loss=" << hex_double(r.loss)
      << " metric=" << hex_double(r.metric) << " lr=" << hex_double(r.lr) << " wE0=" << join_hex(r.weight_E0)
      << " aE0=" << join_hex(r.activation_E0) << "\n";
  }
  for (const auto& t : tensors) {
    m << "tensor " << t.name << " " << blob.size() << " " << t.data.size() << "\n";
    for (double v : t.data) put_f64(blob, v);
  }
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a64(blob.data(), blob.size())));
  m << "blob " << blob.size() << " " << sum << "\nend\n";

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string head = m.str();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move checkpoint into place: " + ec.message());
  }
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  const std::string where = path.string() + ": ";

  std::string line;
  if (!std::getline(in, line)) throw FormatError(where + "empty checkpoint");
  {
    std::istringstream is(line);
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != kMagic) throw FormatError(where + "not a checkpoint");
    if (version != kCheckpointVersion) {
      throw FormatError(where + "checkpoint version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
    }
  }

  Checkpoint ck;
  std::size_t slot_count = 0, blob_bytes = 0;
  std::uint64_t checksum = 0;
  bool have_model = false, ended = false;
  struct Entry {
    std::size_t offset, count;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::map<std::string, std::string>> quants;

  while (!ended && std::getline(in, line)) {
    std::istringstream is(line);
    std::string word;
    is >> word;
    if (word == "model") {
      std::string spec;
      is >> spec;
      ck.model = models::build_from_spec(spec);
      have_model = true;
    } else if (word == "state") {
      const auto kv = kv_tokens(is);
      ck.state.phase = need(kv, "phase");
      ck.state.epoch = std::stoi(need(kv, "epoch"));
      ck.state.seed = std::stoull(need(kv, "seed"));
    } else if (word == "optimizer") {
      const auto kv = kv_tokens(is);
      ck.optim_steps = std::stol(need(kv, "steps"));
      ck.optim_lr = parse_hex_double(need(kv, "lr"));
      slot_count = std::stoul(need(kv, "slots"));
    } else if (word == "quant") {
      quants.push_back(kv_tokens(is));
    } else if (word == "metric") {
      const auto kv = kv_tokens(is);
      MetricRecord r;
      r.epoch = std::stoi(need(kv, "epoch"));
      r.phase = need(kv, "phase");
      r.loss = parse_hex_double(need(kv, "loss"));
      r.metric = parse_hex_double(need(kv, "metric"));
      r.lr = parse_hex_double(need(kv, "lr"));
      r.weight_E0 = split_hex(need(kv, "wE0"));
      r.activation_E0 = split_hex(need(kv, "aE0"));
      ck.state.history.push_back(std::move(r));
    } else if (word == "tensor") {
      std::string name;
      Entry e{};
      if (!(is >> name >> e.offset >> e.count)) throw FormatError(where + "bad tensor line");
      entries[name] = e;
    } else if (word == "blob") {
      std::string sum;
      if (!(is >> blob_bytes >> sum)) throw FormatError(where + "bad blob line");
      checksum = std::stoull(sum, nullptr, 16);
    } else if (word == "end") {
      ended = true;
    } else {
      throw FormatError(where + "unknown manifest line '" + word + "'");
    }
  }
  if (!ended || !have_model) throw FormatError(where + "truncated manifest");

  std::vector<std::uint8_t> blob(blob_bytes);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_bytes));
  if (static_cast<std::size_t>(in.gcount()) != blob_bytes || in.peek() != EOF) {
    throw FormatError(where + "checksum mismatch (blob size differs from manifest)");
  }
  if (fnv1a64(blob.data(), blob.size()) != checksum) throw FormatError(where + "checksum mismatch");

  auto read_into = [&](const std::string& name, auto& dst, bool sized) {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError(where + "missing tensor " + name);
    const Entry& e = it->second;
    if (sized && e.count != dst.size()) {
      throw FormatError(where + name + " has " + std::to_string(e.count) + " elements, model expects " +
                        std::to_string(dst.size()));
    }
    if (e.offset + 8 * e.count > blob.size()) throw FormatError(where + name + " lies outside the blob");
    dst.resize(e.count);
    for (std::size_t k = 0; k < e.count; ++k) dst[k] = get_f64(blob.data() + e.offset + 8 * k);
  };

  nn::ModelGraph& g = ck.model;
  for (auto& p : g.params) read_into("param:" + p.name, p.value.data, true);
  for (std::size_t i = 0; i < g.bn_states.size(); ++i) {
    read_into("bn:" + std::to_string(i) + ":mean", g.bn_states[i].running_mean.data, true);
    read_into("bn:" + std::to_string(i) + ":var", g.bn_states[i].running_var.data, true);
  }
  ck.optim_slots.resize(slot_count);
  for (std::size_t i = 0; i < slot_count; ++i) read_into("slot:" + std::to_string(i), ck.optim_slots[i], false);

  if (quants.size() != g.attachments.size()) {
    throw FormatError(where + "quantizer count " + std::to_string(quants.size()) + " does not match the model");
  }
  for (std::size_t i = 0; i < quants.size(); ++i) {
    const auto& kv = quants[i];
    auto& a = g.attachments[i];
    a.enabled = need(kv, "enabled") == "1";
    a.quantize_activation = need(kv, "qa") == "1";
    a.weight_q.format = num::MinifloatFormat::parse(need(kv, "wfmt"));
    a.weight_q.E0 = parse_hex_double(need(kv, "wE0"));
    a.weight_q.learnable = need(kv, "wlearn") == "1";
    a.activation_q.format = num::MinifloatFormat::parse(need(kv, "afmt"));
    a.activation_q.E0 = parse_hex_double(need(kv, "aE0"));
    a.activation_q.learnable = need(kv, "alearn") == "1";
    a.observed_weight_max = parse_hex_double(need(kv, "wmax"));
    a.observed_activation_max = parse_hex_double(need(kv, "amax"));
  }
  for (auto& p : g.params) p.grad = nn::Tensor(p.value.shape, 0.0);
  return ck;
}

void restore_optimizer(nn::Optimizer& optim, const Checkpoint& ck) {
  optim.restore(ck.optim_steps, ck.optim_lr, ck.optim_slots);
}

}  // namespace mfq::io
