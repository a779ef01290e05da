#include "mfq/nn/tape.hpp"

#include "mfq/error.hpp"

namespace mfq::nn {

Tape::Id Tape::constant(Tensor value, std::string label) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr, std::move(label)});
  return nodes_.size() - 1;
}

Tape::Id Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, nullptr, &p, p.name});
  return nodes_.size() - 1;
}

Tape::Id Tape::record(Tensor value, std::vector<Id> parents, BackwardFn fn, std::string label) {
  if (used_) throw Error("tape already consumed by backward()");
  for (Id p : parents) {
    if (p >= nodes_.size()) throw Error("tape node refers to unknown parent");
  }
#ifndef NDEBUG
  if (!value.all_finite()) throw NonFinite("non-finite output of " + label);
#endif
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(fn), nullptr, std::move(label)});
  return nodes_.size() - 1;
}

void Tape::backward(Id root, const Tensor& seed) {
  if (used_) throw Error("tape reused: backward() may run once per forward pass");
  if (root >= nodes_.size()) throw Error("backward() on a tape without a recorded forward pass");
  if (seed.shape != nodes_[root].value.shape) {
    throw ShapeError("loss gradient shape " + shape_str(seed.shape) + " does not match output " +
                     shape_str(nodes_[root].value.shape));
  }
  used_ = true;
  nodes_[root].grad = seed;

  std::vector<Tensor*> grad_in;
  for (Id i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.data.empty() || !n.fn) continue;
    grad_in.clear();
    for (Id p : n.parents) {
      Node& pn = nodes_[p];
      if (pn.grad.shape != pn.value.shape) pn.grad = Tensor(pn.value.shape, 0.0);
      grad_in.push_back(&pn.grad);
    }
    n.fn(n.grad, grad_in);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.data.empty()) continue;
    if (n.param->grad.shape != n.param->value.shape) n.param->grad = Tensor(n.param->value.shape, 0.0);
    for (std::size_t k = 0; k < n.grad.numel(); ++k) n.param->grad.data[k] += n.grad.data[k];
  }
}

}  // namespace mfq::nn
