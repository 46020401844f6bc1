#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "dca/grad_check.hpp"
#include "dca/model.hpp"

namespace dca {

struct ModelGradCheck {
  GradCheckReport report;
  double relu_margin = 0.0;  // smallest |relu input| at the checked point
};

/// Fixed full-model finite-difference check on one random [1,S,S,3] image,
/// with biases drawn away from their zero initialization.
///
/// A central difference of width h is only a derivative if no relu input sits
/// within reach of its kink, so the smallest |relu input| is reported alongside.
inline ModelGradCheck model_grad_check(ModelConfig config, std::uint64_t seed, double h = 1e-5, double tol = 1e-4) {
  DcaModel model(std::move(config), seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (Parameter* p : model.parameters())
    if (p->tensor.rank() == 1)
      for (double& v : p->tensor.mutable_values()) v = rng.uniform(-0.05, 0.05);
  const std::size_t s = model.config().backbone.input_size;
  Tensor x = Tensor::zeros({1, s, s, 3});
  for (double& v : x.mutable_values()) v = rng.uniform();
  const Tensor y = one_hot({static_cast<int>(rng.below(model.config().head.num_classes))},
                           model.config().head.num_classes);
  auto loss = [&](Tape& tape) {
    Rng unused(0);
    const auto r = model.forward(tape, x, false, unused);
    return cross_entropy(tape, r.probabilities, y);
  };
  double margin = std::numeric_limits<double>::infinity();
  {
    Tape tape;
    loss(tape);
    for (std::size_t i = 0; i < tape.size(); ++i)
      if (tape.node(i).op == "relu")
        for (double v : tape.node(i).inputs[0].values()) margin = std::min(margin, std::abs(v));
  }
  return {grad_check(loss, model.parameters(), h, tol), margin};
}

}  // namespace dca
