#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mfq/error.hpp"
#include "mfq/io/checkpoint.hpp"
#include "mfq/io/config.hpp"
#include "mfq/io/export.hpp"
#include "mfq/io/run.hpp"
#include "mfq/numeric/codec.hpp"
#include "mfq/numeric/quantize.hpp"

using namespace mfq;
using namespace mfq::io;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mfq_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << bytes;
}

// Small, fast run config rooted in `dir`.
RunConfig tiny_config(const fs::path& dir) {
  RunConfig cfg;
  cfg.model = "toy-seg:c=3,w=4,s=1";
  cfg.train_samples = 24;
  cfg.test_samples = 8;
  cfg.synthetic.image_size = 16;
  cfg.synthetic.max_half_size = 4;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.finetune_epochs = 3;
  cfg.warmup_iterations = 4;
  cfg.augment = true;
  cfg.checkpoint = (dir / "run.ckpt").string();
  cfg.pretrained = (dir / "fp.ckpt").string();
  cfg.metrics = (dir / "metrics.txt").string();
  cfg.log = "";
  return cfg;
}

}  // namespace

TEST_CASE("config text roundtrip keeps every field") {
  RunConfig cfg;
  cfg.task = Task::SanityClassify;
  cfg.model = "toy-cls:c=1,k=4,h=16";
  cfg.seed = 42;
  cfg.weights = num::MinifloatFormat::parse("E2M3:zb");
  cfg.activations = num::MinifloatFormat::parse("E2M3:zb");
  cfg.bias_mode = BiasMode::Fixed;
  cfg.fixed_bias = 2;
  cfg.init = num::BiasInit::TightFit;
  cfg.optim.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  cfg.optim.schedule = nn::LrSchedule::MultiStep;
  cfg.ste_clip_zero = true;

  const std::string text = to_text(cfg);
  std::istringstream in(text);
  const RunConfig back = parse_config(in);
  CHECK(to_text(back) == text);
  CHECK(back.optim.lr == cfg.optim.lr);
  CHECK(back.weights == cfg.weights);
  CHECK(back.fixed_bias_for(back.weights) == 2);

  std::istringstream empty("");
  CHECK(to_text(parse_config(empty)) == to_text(RunConfig{}));
}

TEST_CASE("config errors name the source line") {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_config(in, "t.ini");
  };
  CHECK_THROWS_AS(parse("[run]\nepochz = 3\n"), FormatError);
  try {
    parse("[run]\nseed = 1\n\nbogus = 2\n");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("t.ini:4") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("[nope]\n"), FormatError);
  CHECK_THROWS_AS(parse("seed = 1\n"), FormatError);
  CHECK_THROWS_AS(parse("[run]\nseed = 1\nseed = 2\n"), FormatError);
  CHECK_THROWS_AS(parse("[quant]\nweights = E0M2\n"), Error);
  CHECK_THROWS_AS(parse("[run]\nepochs = ten\n"), FormatError);

  RunConfig cfg;
  set_option(cfg, "quant.bias_mode", "fixed");
  CHECK(cfg.bias_mode == BiasMode::Fixed);
  CHECK_THROWS_AS(set_option(cfg, "quant.nothing", "1"), FormatError);
}

TEST_CASE("fixed default bias is 2^(e-1)") {
  RunConfig cfg;
  CHECK(cfg.fixed_bias_for(num::MinifloatFormat{3, 2}) == 4);
  CHECK(cfg.fixed_bias_for(num::MinifloatFormat{2, 3}) == 2);
  cfg.fixed_bias = -1;
  CHECK(cfg.fixed_bias_for(num::MinifloatFormat{3, 2}) == -1);
}

TEST_CASE("config path from the environment") {
  const fs::path dir = fresh_dir("env");
  const fs::path p = dir / "c.ini";
  write_bytes(p, "[run]\nseed = 9\n");
  ::setenv(kConfigEnv, p.c_str(), 1);
  const auto found = default_config_path();
  REQUIRE(found.has_value());
  CHECK(load_config(*found).seed == 9u);
  ::unsetenv(kConfigEnv);
  CHECK_FALSE(default_config_path().has_value());
  CHECK_THROWS_AS(load_config(dir / "missing.ini"), IoError);
}

TEST_CASE("checkpoint save, load, save is byte identical") {
  const fs::path dir = fresh_dir("ckpt");
  RunConfig cfg = tiny_config(dir);
  cfg.epochs = 1;
  const Datasets data = make_datasets(cfg);
  run_train(cfg, data, false);

  cfg.pretrained = cfg.checkpoint;
  cfg.checkpoint = (dir / "qat.ckpt").string();
  run_calibrate(cfg, data);

  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  CHECK(ck.state.phase == "qat");
  CHECK(ck.state.history.size() == 1);
  nn::Optimizer optim(cfg.finetune_optim());
  restore_optimizer(optim, ck);
  save_checkpoint(dir / "again.ckpt", ck.model, optim, ck.state);
  CHECK(slurp(dir / "again.ckpt") == slurp(cfg.checkpoint));

  for (const auto& a : ck.model.attachments) CHECK(a.enabled);
  CHECK_FALSE(fs::exists(cfg.checkpoint + ".tmp"));
}

TEST_CASE("checkpoint corruption is detected") {
  const fs::path dir = fresh_dir("corrupt");
  RunConfig cfg = tiny_config(dir);
  cfg.epochs = 1;
  run_train(cfg, make_datasets(cfg), false);
  const std::string good = slurp(cfg.checkpoint);

  write_bytes(dir / "trunc.ckpt", good.substr(0, good.size() - 10));
  try {
    load_checkpoint(dir / "trunc.ckpt");
    FAIL("expected a checksum error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }

  std::string flipped = good;
  flipped[flipped.size() - 3] ^= 0x01;
  write_bytes(dir / "flip.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "flip.ckpt"), FormatError);

  std::string v2 = good;
  v2.replace(v2.find("mfq-checkpoint 1"), 16, "mfq-checkpoint 2");
  write_bytes(dir / "v2.ckpt", v2);
  try {
    load_checkpoint(dir / "v2.ckpt");
    FAIL("expected a version error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  try {
    load_checkpoint(dir / "absent.ckpt");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("checkpoint not found") != std::string::npos);
  }
}

TEST_CASE("hex reals roundtrip bit-exactly") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng);
    CHECK(parse_hex_double(hex_double(v)) == v);
  }
  CHECK(parse_hex_double(hex_double(-0.0)) == 0.0);
  CHECK_THROWS_AS(parse_hex_double("0x1.8p+1junk"), FormatError);
}

TEST_CASE("resumed full-precision training equals an uninterrupted run") {
  const fs::path a = fresh_dir("resume_a"), b = fresh_dir("resume_b");
  const RunConfig ca = tiny_config(a), cb = tiny_config(b);
  const Datasets data = make_datasets(ca);

  const RunState straight = run_train(ca, data, false);
  RunHooks stop;
  stop.stop_after_epoch = 1;
  run_train(cb, data, false, stop);
  CHECK(load_checkpoint(cb.checkpoint).state.epoch == 1);
  const RunState resumed = run_train(cb, data, true);

  CHECK(resumed.history == straight.history);
  CHECK(slurp(ca.checkpoint) == slurp(cb.checkpoint));
  CHECK(slurp(ca.metrics) == slurp(cb.metrics));
}

TEST_CASE("resumed QAT fine-tune equals an uninterrupted run") {
  const fs::path a = fresh_dir("qresume_a"), b = fresh_dir("qresume_b");
  RunConfig ca = tiny_config(a), cb = tiny_config(b);
  const Datasets data = make_datasets(ca);
  ca.epochs = cb.epochs = 1;
  run_train(ca, data, false);
  fs::copy_file(ca.checkpoint, cb.pretrained);
  fs::copy_file(ca.checkpoint, ca.pretrained);

  const RunState straight = run_qat_finetune(ca, data, false);
  RunHooks stop;
  stop.stop_after_epoch = 2;
  run_qat_finetune(cb, data, false, stop);
  const RunState resumed = run_qat_finetune(cb, data, true);

  CHECK(resumed.history == straight.history);
  CHECK(slurp(ca.checkpoint) == slurp(cb.checkpoint));
  CHECK(slurp(ca.metrics) == slurp(cb.metrics));
  CHECK(straight.history.back().weight_E0.size() == load_checkpoint(ca.checkpoint).model.attachments.size());
}

TEST_CASE("identical config and seed give identical outputs") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  const RunConfig ca = tiny_config(a), cb = tiny_config(b);
  run_train(ca, make_datasets(ca), false);
  run_train(cb, make_datasets(cb), false);
  CHECK(slurp(ca.metrics) == slurp(cb.metrics));
  CHECK(slurp(ca.checkpoint) == slurp(cb.checkpoint));

  RunConfig cc = tiny_config(fresh_dir("det_c"));
  cc.seed = 2;
  run_train(cc, make_datasets(cc), false);
  CHECK(slurp(cc.metrics) != slurp(ca.metrics));
}

TEST_CASE("QAT refuses a missing pretrained checkpoint") {
  RunConfig cfg = tiny_config(fresh_dir("missing"));
  const Datasets data = make_datasets(cfg);
  try {
    run_qat_finetune(cfg, data, false);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("checkpoint not found") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(cfg.checkpoint));
}

TEST_CASE("codeword packing is MSB first") {
  const std::vector<std::uint32_t> codes{0b101, 0b011, 0b111};
  const auto bytes = pack_codewords(codes, 3);
  REQUIRE(bytes.size() == 2);
  CHECK(bytes[0] == 0b10101111);
  CHECK(bytes[1] == 0b10000000);
  CHECK(unpack_codewords(bytes, 3, 3) == codes);
  CHECK_THROWS_AS(pack_codewords(std::vector<std::uint32_t>{8}, 3), InvalidArgument);
  CHECK_THROWS_AS(unpack_codewords(bytes, 3, 6), FormatError);

  std::mt19937 rng(3);
  for (int width = 1; width <= 32; ++width) {
    std::vector<std::uint32_t> v(97);
    for (auto& c : v) c = width == 32 ? rng() : rng() & ((1u << width) - 1u);
    const auto packed = pack_codewords(v, width);
    CHECK(packed.size() == (97 * static_cast<std::size_t>(width) + 7) / 8);
    CHECK(unpack_codewords(packed, width, v.size()) == v);
  }
}

TEST_CASE("E3M2 export of 1000 weights is 750 payload bytes") {
  const fs::path dir = fresh_dir("export1000");
  nn::ModelGraph m;
  m.add_dense(-1, 100, 10, "fc");
  m.init_parameters(11);
  m.configure_quantizers(num::MinifloatFormat{3, 2}, num::MinifloatFormat{3, 2}, 2.5, 3.0, true);
  CHECK_THROWS_AS(quantized_weights(m), InvalidArgument);
  m.attachments[0].enabled = true;

  const auto s = export_quantized(m, dir / "w.mfq");
  CHECK(s.elements == 1000);
  CHECK(s.payload_bytes == 750);
  CHECK(fs::file_size(dir / "w.mfq") == s.payload_bytes + s.manifest_bytes);
  CHECK(32.0 * static_cast<double>(s.elements) / (8.0 * static_cast<double>(s.payload_bytes)) ==
        doctest::Approx(32.0 / 6.0));

  const auto back = load_export(dir / "w.mfq");
  REQUIRE(back.size() == 1);
  CHECK(back[0].bias == 3);
  CHECK(back[0].shape == nn::Shape{10, 100});
  const auto& w = m.params[m.layers[0].weight].value.data;
  CHECK(back[0].values() == num::quantize(w, num::MinifloatFormat{3, 2}, 2.5));
}

TEST_CASE("export of a calibrated model decodes to quantize(master)") {
  const fs::path dir = fresh_dir("export_model");
  RunConfig cfg = tiny_config(dir);
  cfg.epochs = 1;
  cfg.weights = cfg.activations = num::MinifloatFormat::parse("E2M3:zb");
  const Datasets data = make_datasets(cfg);
  run_train(cfg, data, false);
  cfg.pretrained = cfg.checkpoint;
  cfg.checkpoint = (dir / "q.ckpt").string();
  run_calibrate(cfg, data);
  const nn::ModelGraph model = load_checkpoint(cfg.checkpoint).model;

  CHECK_THROWS_AS(quantized_weights(load_checkpoint(cfg.pretrained).model), InvalidArgument);

  export_quantized(model, dir / "w.mfq");
  const auto back = load_export(dir / "w.mfq");
  std::size_t checked = 0;
  for (const auto& l : model.layers) {
    if (l.attachment < 0 || (l.kind != nn::LayerKind::Conv && l.kind != nn::LayerKind::Dense)) continue;
    const auto& a = model.attachments[l.attachment];
    const auto& p = model.params[l.weight];
    REQUIRE(checked < back.size());
    const auto& t = back[checked++];
    CHECK(t.name == p.name);
    CHECK(t.format == a.weight_q.format);
    CHECK(t.values() == num::quantize(p.value.data, a.weight_q.format, a.weight_q.E0));
  }
  CHECK(checked == back.size());

  std::string bytes = slurp(dir / "w.mfq");
  write_bytes(dir / "short.mfq", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(load_export(dir / "short.mfq"), FormatError);
  CHECK_THROWS_AS(load_export(dir / "none.mfq"), IoError);
}
