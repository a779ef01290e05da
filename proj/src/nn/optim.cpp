#include "mfq/nn/optim.hpp"

#include <cmath>
#include <numbers>

#include "mfq/error.hpp"
#include "mfq/nn/graph.hpp"

namespace mfq::nn {

double scheduled_lr(const OptimConfig& cfg, int epoch) {
  switch (cfg.schedule) {
    case LrSchedule::Constant: return cfg.lr;
    case LrSchedule::Cosine: {
      const double T = std::max(1, cfg.total_epochs);
      const double e = std::min(static_cast<double>(epoch), T);
      return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * e / T));
    }
    case LrSchedule::MultiStep:
      return cfg.lr * std::pow(cfg.step_gamma, static_cast<double>(epoch / std::max(1, cfg.step_every)));
  }
  return cfg.lr;
}

std::vector<ParamRef> collect_params(ModelGraph& model) {
  std::vector<ParamRef> out;
  for (auto& p : model.params) {
    if (p.grad.shape != p.value.shape) p.grad = Tensor(p.value.shape, 0.0);
    out.push_back(ParamRef{p.value.values(), p.grad.values(), p.decay});
  }
  for (auto& a : model.attachments) {
    if (!a.enabled) continue;
    if (a.weight_q.learnable) out.push_back(ParamRef{{&a.weight_q.E0, 1}, {&a.g_weight_E0, 1}, false});
    if (a.quantize_activation && a.activation_q.learnable) {
      out.push_back(ParamRef{{&a.activation_q.E0, 1}, {&a.g_activation_E0, 1}, false});
    }
  }
  return out;
}

Optimizer::Optimizer(OptimConfig cfg) : cfg_(cfg), lr_(cfg.lr) {
  if (!(cfg.lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
}

void Optimizer::set_epoch(int epoch) { lr_ = scheduled_lr(cfg_, epoch); }

void Optimizer::restore(long steps, double lr, std::vector<std::vector<double>> slots) {
  steps_ = steps;
  lr_ = lr;
  slots_ = std::move(slots);
}

void Optimizer::step(std::span<const ParamRef> params) {
  const std::size_t per = cfg_.algorithm == OptimAlgorithm::Adam ? 2 : 1;
  if (slots_.size() < per * params.size()) slots_.resize(per * params.size());
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    if (p.value.size() != p.grad.size()) throw ShapeError("optimizer: gradient shape mismatch");
    auto& s1 = slots_[per * i];
    if (s1.size() != p.value.size()) s1.assign(p.value.size(), 0.0);
    const double wd = p.decay ? cfg_.weight_decay : 0.0;
    if (cfg_.algorithm == OptimAlgorithm::SGDMomentum) {
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k] + wd * p.value[k];
        s1[k] = cfg_.momentum * s1[k] + g;
        p.value[k] -= lr_ * s1[k];
      }
    } else {
      auto& s2 = slots_[per * i + 1];
      if (s2.size() != p.value.size()) s2.assign(p.value.size(), 0.0);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k] + wd * p.value[k];
        s1[k] = cfg_.beta1 * s1[k] + (1.0 - cfg_.beta1) * g;
        s2[k] = cfg_.beta2 * s2[k] + (1.0 - cfg_.beta2) * g * g;
        p.value[k] -= lr_ * (s1[k] / bc1) / (std::sqrt(s2[k] / bc2) + cfg_.eps);
      }
    }
  }
}

std::string to_string(OptimAlgorithm a) { return a == OptimAlgorithm::Adam ? "adam" : "sgd"; }

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::Constant: return "constant";
    case LrSchedule::Cosine: return "cosine";
    case LrSchedule::MultiStep: return "multistep";
  }
  return "?";
}

}  // namespace mfq::nn
