#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dca/tensor.hpp"

namespace dca {

/**
 * Linear record of the ops executed during one forward pass.
 *
 * Ops append a node after computing their output, so inputs always precede
 * the node that consumes them. backward() walks the nodes in exact reverse
 * recording order. A tape is meant for one pass; build a fresh one per step.
 */
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward) {
    nodes_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule, last to first.
  /// Gradients accumulate, so a tensor used twice receives the sum of both branches.
  void backward(Tensor loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
    if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any parameter");
    loss.mutable_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail
}  // namespace dca
