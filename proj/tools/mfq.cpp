#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <streambuf>
#include <string>
#include <vector>

#include "mfq/error.hpp"
#include "mfq/hw/lut.hpp"
#include "mfq/hw/multiplier.hpp"
#include "mfq/io/checkpoint.hpp"
#include "mfq/io/config.hpp"
#include "mfq/io/export.hpp"
#include "mfq/io/run.hpp"
#include "mfq/numeric/codec.hpp"

namespace {

using namespace mfq;

std::string g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Writes to two stream buffers at once.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const int ra = a_->sputc(static_cast<char>(c));
    const int rb = b_ ? b_->sputc(static_cast<char>(c)) : c;
    return ra == EOF || rb == EOF ? EOF : c;
  }
  int sync() override { return (a_->pubsync() == 0 && (!b_ || b_->pubsync() == 0)) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config,-c", args.path, std::string("run config file (default: $") + io::kConfigEnv + ")");
  cmd->add_option("--set", args.overrides, "override a config field, section.key=value")->take_all();
}

io::RunConfig resolve_config(const ConfigArgs& args) {
  io::RunConfig cfg;
  if (!args.path.empty()) {
    cfg = io::load_config(args.path);
  } else if (auto p = io::default_config_path()) {
    cfg = io::load_config(*p);
  }
  for (const auto& o : args.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects section.key=value, got '" + o + "'");
    io::set_option(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

int inspect_format(const std::string& text, std::optional<int> bias_opt) {
  const auto fmt = num::MinifloatFormat::parse(text);
  fmt.validate();
  if (fmt.width() > 16) throw InvalidArgument("inspect-format lists the full grid; use a format of at most 16 bits");
  const int bias = bias_opt.value_or(num::ieee_bias(fmt));
  const auto range = num::quant_range(fmt, bias);
  const auto values = num::enumerate_values(fmt, bias);
  std::cout << "format " << fmt.to_string() << " ("
            << (fmt.zero == num::ZeroEncoding::ZeroPoint ? "zero-point" : "zero-binade") << "), " << fmt.width()
            << " bits, bias " << bias << "\n";
  std::cout << "x_min " << g(range.x_min) << "\n";
  std::cout << "x_max " << g(range.x_max) << "\n";
  std::cout << "values " << values.size() << " distinct\n";
  std::cout << "grid";
  for (double v : values) std::cout << " " << g(v);
  std::cout << "\n";
  return 0;
}

int hwsim(const std::string& text, std::optional<int> bias_opt, const std::string& vectors) {
  const auto fmt = num::MinifloatFormat::parse(text);
  fmt.validate();
  const int bias = bias_opt.value_or(num::ieee_bias(fmt));
  const auto rep = hw::verify_multiplier_exhaustive(fmt, bias);
  std::cout << fmt.to_string() << " bias " << bias << ": " << rep.exact << "/" << rep.pairs << " pairs exact\n";
  if (!vectors.empty()) {
    const std::string tmp = vectors + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw IoError("cannot write " + tmp);
      hw::write_test_vectors(out, fmt);
      if (!out) throw IoError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, vectors);
    std::cout << "test vectors: " << vectors << "\n";
  }
  return rep.ok() ? 0 : 1;
}

int lut_report() {
  std::printf("%-6s %12s %12s\n", "format", "zero-binade", "zero-point");
  for (const auto& e : hw::kLutTable) {
    std::printf("E%dM%d   %12d %12d\n", e.e, e.m, e.zero_binade, e.zero_point);
  }
  return 0;
}

void print_quantizers(const nn::ModelGraph& model) {
  for (std::size_t i = 0; i < model.attachments.size(); ++i) {
    const auto& a = model.attachments[i];
    if (!a.enabled) continue;
    std::cout << "quantizer " << i << " weight " << a.weight_q.format.to_string() << " E0=" << g(a.weight_q.E0)
              << " E_B=" << a.weight_q.bias();
    if (a.quantize_activation) {
      std::cout << " activation " << a.activation_q.format.to_string() << " E0=" << g(a.activation_q.E0)
                << " E_B=" << a.activation_q.bias();
    }
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minifloat quantization-aware training toolkit"};
  app.require_subcommand(1);

  std::string fmt_text = "E3M2";
  std::optional<int> bias;
  auto* inspect = app.add_subcommand("inspect-format", "print the range and value grid of a format");
  inspect->add_option("format", fmt_text, "format string, e.g. E3M2 or E3M2:zb")->required();
  inspect->add_option("--bias", bias, "integer exponent bias (default 2^(e-1)-1)");

  std::string vectors;
  auto* sim = app.add_subcommand("hwsim", "exhaustively verify the multiplier model and emit test vectors");
  sim->add_option("--format", fmt_text, "format string")->required();
  sim->add_option("--bias", bias, "integer exponent bias (default 2^(e-1)-1)");
  sim->add_option("--vectors", vectors, "test vector output file (empty: none)");

  auto* lut = app.add_subcommand("lut-report", "print the multiplier LUT cost table");

  ConfigArgs cargs;
  bool resume = false;
  std::string ckpt_path, out_path;

  auto* train = app.add_subcommand("train", "full-precision training");
  add_config_args(train, cargs);
  train->add_flag("--resume", resume, "continue from the configured checkpoint if present");

  auto* calib = app.add_subcommand("calibrate", "warm-up calibration of the exponent biases of a pretrained model");
  add_config_args(calib, cargs);

  auto* qat = app.add_subcommand("qat-finetune", "calibrate a pretrained model and fine-tune it quantized");
  add_config_args(qat, cargs);
  qat->add_flag("--resume", resume, "continue a fine-tune from the configured checkpoint if present");

  auto* show = app.add_subcommand("show-config", "print the resolved run config with every default");
  add_config_args(show, cargs);

  auto* eval = app.add_subcommand("eval", "report the test metric of a checkpoint");
  add_config_args(eval, cargs);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint (default: run.checkpoint)");

  auto* exp = app.add_subcommand("export", "write packed quantized weights of a calibrated checkpoint");
  add_config_args(exp, cargs);
  exp->add_option("--checkpoint", ckpt_path, "checkpoint (default: run.checkpoint)");
  exp->add_option("--out,-o", out_path, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) return inspect_format(fmt_text, bias);
    if (*sim) return hwsim(fmt_text, bias, vectors);
    if (*lut) return lut_report();

    const io::RunConfig cfg = resolve_config(cargs);
    if (*show) {
      std::cout << io::to_text(cfg);
      return 0;
    }
    if (*eval || *exp) {
      const std::string path = ckpt_path.empty() ? cfg.checkpoint : ckpt_path;
      if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path);
      if (*eval) {
        const auto data = io::make_datasets(cfg);
        const double metric = io::run_eval(path, cfg, data);
        std::cout << (data.test.is_classification() ? "top1 " : "mean_iou ") << g(metric) << "\n";
        return 0;
      }
      const auto ck = io::load_checkpoint(path);
      const auto s = io::export_quantized(ck.model, out_path);
      std::cout << "exported " << s.tensors << " tensors, " << s.elements << " weights, " << s.payload_bytes
                << " payload bytes + " << s.manifest_bytes << " manifest bytes ("
                << g(static_cast<double>(s.elements) * 4.0 / static_cast<double>(s.payload_bytes))
                << "x smaller than fp32)\n";
      return 0;
    }

    if ((*qat || *calib) && !std::filesystem::exists(cfg.pretrained)) {
      throw IoError("checkpoint not found: " + cfg.pretrained);
    }

    std::ofstream logfile;
    if (!cfg.log.empty()) {
      logfile.open(cfg.log, std::ios::app);
      if (!logfile) throw IoError("cannot open log " + cfg.log);
    }
    TeeBuf tee(std::cout.rdbuf(), logfile.is_open() ? logfile.rdbuf() : nullptr);
    std::ostream log(&tee);
    io::RunHooks hooks;
    hooks.log = &log;

    const auto data = io::make_datasets(cfg);
    if (*train) {
      const auto state = io::run_train(cfg, data, resume, hooks);
      log << "trained " << state.epoch << " epochs; checkpoint " << cfg.checkpoint << std::endl;
    } else if (*calib) {
      io::run_calibrate(cfg, data, hooks);
      print_quantizers(io::load_checkpoint(cfg.checkpoint).model);
    } else if (*qat) {
      const auto state = io::run_qat_finetune(cfg, data, resume, hooks);
      log << "fine-tuned " << state.epoch << " epochs; checkpoint " << cfg.checkpoint << std::endl;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "mfq: error: " << e.what() << "\n";
    return 1;
  }
}
