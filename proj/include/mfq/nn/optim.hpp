#pragma once

#include <span>
#include <string>
#include <vector>

namespace mfq::nn {

class ModelGraph;

enum class OptimAlgorithm { SGDMomentum, Adam };
enum class LrSchedule { Constant, Cosine, MultiStep };

struct OptimConfig {
  OptimAlgorithm algorithm = OptimAlgorithm::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::Constant;
  int total_epochs = 1;   ///< cosine horizon
  int step_every = 200;   ///< multistep interval in epochs
  double step_gamma = 0.5;
};

/// Learning rate at a (zero-based) epoch.
double scheduled_lr(const OptimConfig& cfg, int epoch);

/// A value to update in place with its gradient.
struct ParamRef {
  std::span<double> value;
  std::span<const double> grad;
  bool decay = false;
};

/// Model weights followed by the learnable exponent biases, in a fixed order.
std::vector<ParamRef> collect_params(ModelGraph& model);

/// SGD with momentum or Adam, one slot set per ParamRef position.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg);

  const OptimConfig& config() const noexcept { return cfg_; }
  double lr() const noexcept { return lr_; }
  long steps() const noexcept { return steps_; }

  void set_epoch(int epoch);
  void step(std::span<const ParamRef> params);

  /// Slot tensors in order: per parameter, first moment (or velocity) then
  /// second moment (Adam only). Used by checkpointing.
  std::vector<std::vector<double>>& slots() noexcept { return slots_; }
  const std::vector<std::vector<double>>& slots() const noexcept { return slots_; }
  void restore(long steps, double lr, std::vector<std::vector<double>> slots);

 private:
  OptimConfig cfg_;
  double lr_;
  long steps_ = 0;
  std::vector<std::vector<double>> slots_;
};

std::string to_string(OptimAlgorithm a);
std::string to_string(LrSchedule s);

}  // namespace mfq::nn
