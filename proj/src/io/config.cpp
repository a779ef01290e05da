#include "mfq/io/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "mfq/error.hpp"

namespace mfq::io {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw InvalidArgument("not a boolean: '" + s + "'");
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> names) {
  std::string all;
  for (const auto& [n, v] : names) {
    if (s == n) return v;
    all += all.empty() ? n : std::string(" | ") + n;
  }
  throw InvalidArgument("expected one of " + all + ", got '" + s + "'");
}

Field int_field(const char* sec, const char* key, int& v) {
  return {sec, key, [&v](const std::string& s) { v = parse_number<int>(s); }, [&v] { return std::to_string(v); }};
}
Field dbl_field(const char* sec, const char* key, double& v) {
  return {sec, key, [&v](const std::string& s) { v = parse_double(s); }, [&v] { return fmt_double(v); }};
}
Field bool_field(const char* sec, const char* key, bool& v) {
  return {sec, key, [&v](const std::string& s) { v = parse_bool(s); }, [&v] { return std::string(bool_str(v)); }};
}
Field str_field(const char* sec, const char* key, std::string& v) {
  return {sec, key, [&v](const std::string& s) { v = s; }, [&v] { return v; }};
}
Field fmt_field(const char* sec, const char* key, num::MinifloatFormat& v) {
  return {sec, key, [&v](const std::string& s) { v = num::MinifloatFormat::parse(s); },
          [&v] { return v.to_string(); }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& o = c.optim;
  auto& d = c.synthetic;
  return {
      {"run", "task",
       [&c](const std::string& s) {
         c.task = parse_enum<Task>(
             s, {{"synthetic-seg", Task::SyntheticSeg}, {"dir-seg", Task::DirSeg}, {"sanity-classify", Task::SanityClassify}});
       },
       [&c] { return to_string(c.task); }},
      str_field("run", "model", c.model),
      {"run", "seed", [&c](const std::string& s) { c.seed = parse_number<std::uint64_t>(s); },
       [&c] { return std::to_string(c.seed); }},
      int_field("run", "epochs", c.epochs),
      int_field("run", "batch_size", c.batch_size),
      int_field("run", "eval_batch_size", c.eval_batch_size),
      str_field("run", "checkpoint", c.checkpoint),
      str_field("run", "pretrained", c.pretrained),
      str_field("run", "metrics", c.metrics),
      str_field("run", "log", c.log),

      int_field("data", "train_samples", c.train_samples),
      int_field("data", "test_samples", c.test_samples),
      int_field("data", "image_size", d.image_size),
      int_field("data", "channels", d.channels),
      int_field("data", "min_objects", d.min_objects),
      int_field("data", "max_objects", d.max_objects),
      dbl_field("data", "min_half_size", d.min_half_size),
      dbl_field("data", "max_half_size", d.max_half_size),
      dbl_field("data", "noise", d.noise),
      dbl_field("data", "brightness_jitter", d.brightness_jitter),
      dbl_field("data", "contrast_jitter", d.contrast_jitter),
      int_field("data", "crop_size", d.crop_size),
      bool_field("data", "flips", d.flips),
      {"data", "data_seed", [&d](const std::string& s) { d.seed = parse_number<std::uint64_t>(s); },
       [&d] { return std::to_string(d.seed); }},
      bool_field("data", "augment", c.augment),
      str_field("data", "data_dir", c.data_dir),
      int_field("data", "classes", c.classes),

      fmt_field("quant", "weights", c.weights),
      fmt_field("quant", "activations", c.activations),
      {"quant", "zero_encoding",
       [&c](const std::string& s) {
         const auto z = parse_enum<num::ZeroEncoding>(
             s, {{"zero-point", num::ZeroEncoding::ZeroPoint}, {"zero-binade", num::ZeroEncoding::ZeroBinade}});
         c.weights.zero = c.activations.zero = z;
       },
       [&c] { return std::string(c.weights.zero == num::ZeroEncoding::ZeroBinade ? "zero-binade" : "zero-point"); }},
      {"quant", "bias_mode",
       [&c](const std::string& s) {
         c.bias_mode = parse_enum<BiasMode>(s, {{"learned", BiasMode::Learned}, {"fixed", BiasMode::Fixed}});
       },
       [&c] { return to_string(c.bias_mode); }},
      {"quant", "fixed_bias",
       [&c](const std::string& s) {
         if (s == "auto") {
           c.fixed_bias.reset();
         } else {
           c.fixed_bias = parse_number<int>(s);
         }
       },
       [&c] { return c.fixed_bias ? std::to_string(*c.fixed_bias) : std::string("auto"); }},
      {"quant", "init",
       [&c](const std::string& s) {
         c.init = parse_enum<num::BiasInit>(s, {{"centered", num::BiasInit::Centered}, {"tight", num::BiasInit::TightFit}});
       },
       [&c] { return std::string(c.init == num::BiasInit::TightFit ? "tight" : "centered"); }},
      int_field("quant", "warmup_iterations", c.warmup_iterations),
      bool_field("quant", "ste_clip_zero", c.ste_clip_zero),
      int_field("quant", "finetune_epochs", c.finetune_epochs),
      dbl_field("quant", "finetune_lr", c.finetune_lr),

      {"optim", "algorithm",
       [&o](const std::string& s) {
         o.algorithm = parse_enum<nn::OptimAlgorithm>(s, {{"adam", nn::OptimAlgorithm::Adam}, {"sgd", nn::OptimAlgorithm::SGDMomentum}});
       },
       [&o] { return nn::to_string(o.algorithm); }},
      dbl_field("optim", "lr", o.lr),
      dbl_field("optim", "momentum", o.momentum),
      dbl_field("optim", "weight_decay", o.weight_decay),
      dbl_field("optim", "beta1", o.beta1),
      dbl_field("optim", "beta2", o.beta2),
      dbl_field("optim", "eps", o.eps),
      {"optim", "schedule",
       [&o](const std::string& s) {
         o.schedule = parse_enum<nn::LrSchedule>(s, {{"constant", nn::LrSchedule::Constant},
                                                     {"cosine", nn::LrSchedule::Cosine},
                                                     {"multistep", nn::LrSchedule::MultiStep}});
       },
       [&o] { return nn::to_string(o.schedule); }},
      int_field("optim", "step_every", o.step_every),
      dbl_field("optim", "step_gamma", o.step_gamma),
  };
}

Field& find_field(std::vector<Field>& fs, const std::string& section, const std::string& key) {
  for (auto& f : fs) {
    if (f.section == section && f.key == key) return f;
  }
  throw FormatError("unknown key '" + key + "' in section [" + section + "]");
}

}  // namespace

nn::OptimConfig RunConfig::finetune_optim() const {
  nn::OptimConfig o = optim;
  o.lr = finetune_lr;
  o.total_epochs = finetune_epochs;
  return o;
}

int RunConfig::fixed_bias_for(const num::MinifloatFormat& f) const {
  return fixed_bias ? *fixed_bias : (1 << (f.e - 1));
}

void RunConfig::validate() const {
  if (epochs < 0 || finetune_epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (batch_size < 1 || eval_batch_size < 1) throw InvalidArgument("batch sizes must be positive");
  if (train_samples < 1 || test_samples < 1) throw InvalidArgument("sample counts must be positive");
  if (warmup_iterations < 1) throw InvalidArgument("warmup_iterations must be positive");
  if (!(optim.lr > 0.0) || !(finetune_lr >= 0.0)) throw InvalidArgument("learning rates must be positive");
  if (task == Task::DirSeg && data_dir.empty()) throw InvalidArgument("task dir-seg needs data.data_dir");
  if (task == Task::SanityClassify && classes < 2) throw InvalidArgument("classes must be at least 2");
  weights.validate();
  activations.validate();
  synthetic.validate();
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  auto fs = fields(cfg);
  std::set<std::string> seen;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };
    if (t.front() == '[') {
      if (t.back() != ']') throw FormatError(where() + "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "run" && section != "data" && section != "quant" && section != "optim") {
        throw FormatError(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError(where() + "expected 'key = value'");
    if (section.empty()) throw FormatError(where() + "key outside of a [section]");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (!seen.insert(section + "." + key).second) throw FormatError(where() + "duplicate key '" + key + "'");
    try {
      find_field(fs, section, key).set(value);
    } catch (const Error& e) {
      throw FormatError(where() + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config not found: " + path.string());
  return parse_config(in, path.string());
}

std::string to_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  auto fs = fields(copy);
  std::ostringstream os;
  std::string section;
  for (const auto& f : fs) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get() << "\n";
  }
  return os.str();
}

void set_option(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw FormatError("override '" + dotted_key + "' must be section.key");
  auto fs = fields(cfg);
  try {
    find_field(fs, dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(value);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(dotted_key + ": " + e.what());
  }
}

std::optional<std::filesystem::path> default_config_path() {
  const char* env = std::getenv(kConfigEnv);
  if (env == nullptr || *env == '\0') return std::nullopt;
  return std::filesystem::path(env);
}

std::string to_string(Task t) {
  switch (t) {
    case Task::SyntheticSeg: return "synthetic-seg";
    case Task::DirSeg: return "dir-seg";
    case Task::SanityClassify: return "sanity-classify";
  }
  return "?";
}

std::string to_string(BiasMode m) { return m == BiasMode::Fixed ? "fixed" : "learned"; }

}  // namespace mfq::io
