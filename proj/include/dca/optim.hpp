#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "dca/parameter.hpp"
#include "dca/tensor.hpp"

namespace dca {

struct AdamWConfig {
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda = 1e-4;
  /// Off reproduces the literal rule that uses raw m_t, v_t.
  bool bias_correction = true;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("AdamWConfig: beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("AdamWConfig: beta2 must lie in [0,1)");
    if (!(eta > 0.0)) throw std::invalid_argument("AdamWConfig: eta must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("AdamWConfig: epsilon must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("AdamWConfig: lambda must be >= 0");
  }
};

/**
 * One decoupled-weight-decay Adam update on every parameter:
 *
 *   m <- b1 m + (1-b1) g
 *   v <- b2 v + (1-b2) g^2
 *   theta <- theta - eta (m^ / (sqrt(v^) + eps) + lambda theta)
 *
 * where m^, v^ are the bias-corrected moments (or m, v when correction is
 * off). Gradients are zeroed afterwards. Every parameter must carry a
 * gradient written since its last step; otherwise nothing is updated.
 */
inline void adamw_step(const ParameterRefs& params, const AdamWConfig& config) {
  config.validate();
  for (const Parameter* p : params)
    if (!p->tensor.grad_fresh()) throw std::logic_error("adamw_step: parameter '" + p->name + "' has no gradient");

  for (Parameter* p : params) {
    p->step += 1;
    const double t = static_cast<double>(p->step);
    const double c1 = config.bias_correction ? 1.0 - std::pow(config.beta1, t) : 1.0;
    const double c2 = config.bias_correction ? 1.0 - std::pow(config.beta2, t) : 1.0;
    auto theta = p->tensor.mutable_values();
    auto g = p->tensor.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      p->m[i] = config.beta1 * p->m[i] + (1.0 - config.beta1) * g[i];
      p->v[i] = config.beta2 * p->v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = p->m[i] / c1;
      const double v_hat = p->v[i] / c2;
      theta[i] = theta[i] - config.eta * (m_hat / (std::sqrt(v_hat) + config.epsilon) + config.lambda * theta[i]);
    }
    p->zero_grad();
  }
}

/// Rescales every column of a [Din,Dout] matrix to unit L2 norm.
/// A column with norm <= 1e-12 is a dead unit and is rejected.
inline void unit_norm_project(Tensor& weight) {
  expect_rank(weight, 2, "unit_norm_project");
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  auto w = weight.mutable_values();
  for (std::size_t c = 0; c < cols; ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sq += w[r * cols + c] * w[r * cols + c];
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12))
      throw std::domain_error("unit_norm_project: column " + std::to_string(c) + " has zero norm (dead unit)");
    for (std::size_t r = 0; r < rows; ++r) w[r * cols + c] /= norm;
  }
}

}  // namespace dca
