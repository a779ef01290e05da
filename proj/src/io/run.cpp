#include "mfq/io/run.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mfq/error.hpp"
#include "mfq/models/builders.hpp"

namespace mfq::io {

namespace fs = std::filesystem;

namespace {

// Shortest text that reads back to the same double.
std::string real_str(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

models::EpochOptions epoch_options(const RunConfig& cfg, int epoch) {
  models::EpochOptions eo;
  eo.epoch = epoch;
  eo.batch_size = cfg.batch_size;
  eo.seed = cfg.seed;
  eo.augment = cfg.augment;
  eo.augmentation = cfg.synthetic;
  eo.ste_clip_zero = cfg.ste_clip_zero;
  return eo;
}

MetricRecord snapshot(const nn::ModelGraph& model, int epoch, const std::string& phase, double loss, double metric,
                      double lr) {
  MetricRecord r{epoch, phase, loss, metric, lr, {}, {}};
  if (phase == "qat") {
    for (const auto& a : model.attachments) {
      r.weight_E0.push_back(a.weight_q.E0);
      if (a.quantize_activation) r.activation_E0.push_back(a.activation_q.E0);
    }
  }
  return r;
}

// Shared epoch loop of both phases.
RunState train_loop(const RunConfig& cfg, const Datasets& data, nn::ModelGraph& model, nn::Optimizer& optim,
                    RunState state, int total_epochs, const RunHooks& hooks) {
  for (int e = state.epoch; e < total_epochs; ++e) {
    if (hooks.stop_after_epoch >= 0 && e >= hooks.stop_after_epoch) break;
    const double loss = models::train_epoch(model, optim, data.train, epoch_options(cfg, e));
    const double metric = models::evaluate(model, data.test, cfg.eval_batch_size);
    state.history.push_back(snapshot(model, e, state.phase, loss, metric, optim.lr()));
    state.epoch = e + 1;
    save_checkpoint(cfg.checkpoint, model, optim, state);
    write_metrics(cfg.metrics, state.history);
    if (hooks.log != nullptr) *hooks.log << metrics_line(state.history.back()) << std::endl;
  }
  return state;
}

nn::OptimConfig fp_optim(const RunConfig& cfg) {
  nn::OptimConfig o = cfg.optim;
  o.total_epochs = cfg.epochs;
  return o;
}

struct Calibrated {
  nn::ModelGraph model;
  nn::Optimizer optim;
  RunState state;
  nn::CalibrationResult result;
};

Calibrated calibrate(const RunConfig& cfg, const Datasets& data, const RunHooks& hooks) {
  if (!fs::exists(cfg.pretrained)) throw IoError("checkpoint not found: " + cfg.pretrained);
  Checkpoint ck = load_checkpoint(cfg.pretrained);
  Calibrated c{std::move(ck.model), nn::Optimizer(cfg.finetune_optim()), {}, {}};
  c.state.phase = "qat";
  c.state.seed = cfg.seed;
  c.state.history = std::move(ck.state.history);

  const bool learned = cfg.bias_mode == BiasMode::Learned;
  c.model.configure_quantizers(cfg.weights, cfg.activations, 0.0, 0.0, learned);
  c.result = nn::warmup_calibrate(c.model, c.optim, models::loss_for(data.train),
                                  models::training_stream(data.train, epoch_options(cfg, 0)), cfg.warmup_iterations,
                                  cfg.init, learned, nn::StepOptions{cfg.ste_clip_zero, false});
  if (!learned) {
    for (auto& a : c.model.attachments) {
      a.weight_q.E0 = cfg.fixed_bias_for(a.weight_q.format);
      a.activation_q.E0 = cfg.fixed_bias_for(a.activation_q.format);
    }
  }
  if (hooks.log != nullptr) {
    *hooks.log << "calibrated " << c.model.attachments.size() << " quantizers after " << c.result.iterations
               << " warm-up iterations (" << to_string(cfg.bias_mode) << " bias)" << std::endl;
  }
  return c;
}

}  // namespace

Datasets make_datasets(const RunConfig& cfg) {
  Datasets d;
  switch (cfg.task) {
    case Task::SyntheticSeg:
      d.train.samples = models::gen_synthetic_segmentation(cfg.synthetic, cfg.train_samples);
      d.test.samples = models::gen_synthetic_segmentation(cfg.synthetic, cfg.test_samples,
                                                          static_cast<std::size_t>(cfg.train_samples));
      break;
    case Task::DirSeg:
      d.train.samples = models::load_image_mask_dir(fs::path(cfg.data_dir) / "train");
      d.test.samples = models::load_image_mask_dir(fs::path(cfg.data_dir) / "test");
      if (d.train.size() == 0 || d.test.size() == 0) {
        throw IoError("dir-seg needs non-empty train/ and test/ under " + cfg.data_dir);
      }
      break;
    case Task::SanityClassify:
      d.train = models::gen_synthetic_classification(static_cast<std::size_t>(cfg.train_samples), cfg.classes,
                                                     cfg.synthetic.image_size, cfg.synthetic.seed);
      d.test = models::gen_synthetic_classification(static_cast<std::size_t>(cfg.test_samples), cfg.classes,
                                                    cfg.synthetic.image_size, cfg.synthetic.seed + 0x9e3779b9ull);
      break;
  }
  return d;
}

RunState run_train(const RunConfig& cfg, const Datasets& data, bool resume, const RunHooks& hooks) {
  if (resume && fs::exists(cfg.checkpoint)) {
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    if (ck.state.phase != "fp") throw InvalidArgument(cfg.checkpoint + " is not a full-precision training checkpoint");
    nn::Optimizer optim(fp_optim(cfg));
    restore_optimizer(optim, ck);
    return train_loop(cfg, data, ck.model, optim, ck.state, cfg.epochs, hooks);
  }
  nn::ModelGraph model = models::build_from_spec(cfg.model);
  model.init_parameters(cfg.seed);
  // Fail early on a model / data mismatch.
  nn::Shape input = data.train.samples.at(0).image.shape;
  input.insert(input.begin(), 1);
  model.infer_shapes(input);
  nn::Optimizer optim(fp_optim(cfg));
  RunState state;
  state.seed = cfg.seed;
  return train_loop(cfg, data, model, optim, state, cfg.epochs, hooks);
}

nn::CalibrationResult run_calibrate(const RunConfig& cfg, const Datasets& data, const RunHooks& hooks) {
  Calibrated c = calibrate(cfg, data, hooks);
  save_checkpoint(cfg.checkpoint, c.model, c.optim, c.state);
  return c.result;
}

RunState run_qat_finetune(const RunConfig& cfg, const Datasets& data, bool resume, const RunHooks& hooks) {
  if (resume && fs::exists(cfg.checkpoint)) {
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    if (ck.state.phase == "qat") {
      nn::Optimizer optim(cfg.finetune_optim());
      restore_optimizer(optim, ck);
      return train_loop(cfg, data, ck.model, optim, ck.state, cfg.finetune_epochs, hooks);
    }
  }
  Calibrated c = calibrate(cfg, data, hooks);
  return train_loop(cfg, data, c.model, c.optim, c.state, cfg.finetune_epochs, hooks);
}

double run_eval(const fs::path& checkpoint, const RunConfig& cfg, const Datasets& data) {
  Checkpoint ck = load_checkpoint(checkpoint);
  return models::evaluate(ck.model, data.test, cfg.eval_batch_size);
}

std::string metrics_line(const MetricRecord& r) {
  std::ostringstream os;
  os << "epoch=" << r.epoch << " phase=" << r.phase << " loss=" << real_str(r.loss) << " metric=" << real_str(r.metric)
     << " lr=" << real_str(r.lr);
  auto list = [&](const char* key, const std::vector<double>& v) {
    if (v.empty()) return;
    os << " " << key << "=";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << real_str(v[i]);
  };
  list("E0_w", r.weight_E0);
  list("E0_a", r.activation_E0);
  return os.str();
}

void write_metrics(const fs::path& path, const std::vector<MetricRecord>& history) {
  if (path.empty()) return;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& r : history) out << metrics_line(r) << "\n";
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace mfq::io
