#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ordcast/probcast.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

/// Reverse-mode tape over C x H x W feature maps. Every node stores how to
/// recompute its value from its inputs, so replay() reproduces the recorded
/// forward pass, and how to push its gradient back to its inputs.
class Tape {
 public:
  using Id = std::size_t;

  Id leaf(Tensor value, bool requires_grad = false);

  Id conv2d(Id x, Id weight, Id bias);
  Id silu(Id x);
  Id sigmoid(Id x);
  Id add(Id a, Id b);
  Id space_to_depth(Id x, std::size_t block);
  Id depth_to_space(Id x, std::size_t block);
  Id concat(const std::vector<Id>& parts);  // along axis 0
  Id reshape(Id x, std::vector<std::size_t> shape);
  // Scalar node wrapping a loss with an analytic input gradient.
  Id loss(Id x, std::function<LossResult(const Tensor&, bool)> fn);

  const Tensor& value(Id id) const { return nodes_[id].value; }
  // Gradient of the last backward() root wrt node id (zeros if unreached).
  const Tensor& grad(Id id) const { return nodes_[id].grad; }
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Id root, double seed = 1.0);
  void backward(Id root, const Tensor& seed);

  // Recomputes every non-leaf node in recording order.
  void replay();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Id> inputs;
    bool requires_grad = false;
    std::function<Tensor(const Tape&)> forward;
    std::function<void(Tape&, Id)> backward;
  };

  Id push(std::vector<Id> inputs, std::function<Tensor(const Tape&)> fwd,
          std::function<void(Tape&, Id)> bwd);
  Tensor& grad_slot(Id id);

  std::vector<Node> nodes_;
};

}  // namespace ordcast
