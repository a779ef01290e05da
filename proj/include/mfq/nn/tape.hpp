#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfq/nn/tensor.hpp"

namespace mfq::nn {

/// Records operations of one forward pass and replays them in reverse.
///
/// Each node owns its output value. A backward closure receives the output
/// gradient and the (already allocated, zero-initialized) gradients of its
/// parents, into which it accumulates. Parameter leaves flush their gradient
/// into Parameter::grad at the end of backward(). A tape is single use.
class Tape {
 public:
  using Id = std::size_t;
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant leaf; receives no gradient sink.
  Id constant(Tensor value, std::string label = "input");

  /// Parameter leaf; its value is copied and its gradient added to p.grad.
  Id param(Parameter& p);

  Id record(Tensor value, std::vector<Id> parents, BackwardFn fn, std::string label);

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  const std::string& label(Id id) const { return nodes_.at(id).label; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of a node after backward(); empty tensor if it received none.
  const Tensor& grad(Id id) const { return nodes_.at(id).grad; }

  /// Reverse traversal seeded with d(loss)/d(root). Throws on reuse.
  void backward(Id root, const Tensor& seed);

  bool used() const noexcept { return used_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Id> parents;
    BackwardFn fn;
    Parameter* param = nullptr;
    std::string label;
  };
  std::vector<Node> nodes_;
  bool used_ = false;
};

}  // namespace mfq::nn
