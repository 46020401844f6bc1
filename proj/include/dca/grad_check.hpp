#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dca/autograd.hpp"
#include "dca/parameter.hpp"

namespace dca {

/// Elements with |analytic| + |numeric| below this are at the mercy of round-off:
/// the central difference of an O(1) loss is quantized in steps of ~ulp(loss) / 2h.
inline constexpr double kResolvableGradient = 1e-6;

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  double resolved_relative_error = 0.0;  // worst over elements >= kResolvableGradient
  std::size_t unresolved = 0;            // nonzero elements below kResolvableGradient
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_relative_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
    return worst;
  }
  double max_abs_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_abs_error);
    return worst;
  }
  double resolved_relative_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.resolved_relative_error);
    return worst;
  }
  std::size_t unresolved() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.unresolved;
    return n;
  }
  bool passed() const { return max_relative_error() < tolerance; }
};

inline std::ostream& operator<<(std::ostream& os, const GradCheckReport& r) {
  for (const auto& e : r.entries)
    os << e.name << " n=" << e.elements << " max_rel=" << e.max_relative_error
       << " max_abs=" << e.max_abs_error << " at=" << e.worst_index
       << " resolved_rel=" << e.resolved_relative_error << " unresolved=" << e.unresolved << '\n';
  os << (r.passed() ? "PASS" : "FAIL") << " max_rel=" << r.max_relative_error() << " tol=" << r.tolerance
     << " max_abs=" << r.max_abs_error() << " resolved_rel=" << r.resolved_relative_error()
     << " unresolved=" << r.unresolved() << '\n';
  return os;
}

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossFn = std::function<Tensor(Tape&)>;

/**
 * Compares reverse-mode gradients with central differences
 * (f(x+h) - f(x-h)) / 2h for every element of every parameter.
 *
 * Per-element error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|);
 * the report keeps the worst element per parameter. Parameter values are
 * restored exactly afterwards and gradients are left zeroed.
 */
inline GradCheckReport grad_check(const LossFn& loss_fn, const ParameterRefs& params, double h, double tol) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Tensor loss = loss_fn(tape);
  if (loss.size() != 1) throw ShapeError("grad_check: loss must be scalar, got " + to_string(loss.shape()));
  tape.backward(loss);
  const double base = loss.item();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.emplace_back(p->tensor.grad().begin(), p->tensor.grad().end());

  // Without grads the loss function records nothing, which keeps the probing passes cheap.
  for (Parameter* p : params) p->tensor.set_requires_grad(false);
  auto evaluate = [&] {
    Tape scratch;
    return loss_fn(scratch).item();
  };
  const double again = evaluate();
  if (again != base) {
    for (Parameter* p : params) p->tensor.set_requires_grad(true);
    throw std::logic_error("grad_check: loss function is not deterministic (" + std::to_string(base) +
                           " vs " + std::to_string(again) + ")");
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GradCheckEntry entry{p.name, p.tensor.size(), 0.0, 0.0, 0, 0.0, 0};
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max(1e-8, std::abs(a) + std::abs(numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      const double magnitude = std::abs(a) + std::abs(numeric);
      if (magnitude >= kResolvableGradient)
        entry.resolved_relative_error = std::max(entry.resolved_relative_error, rel);
      else if (magnitude > 0.0)
        ++entry.unresolved;
      if (rel > entry.max_relative_error) {
        entry.max_relative_error = rel;
        entry.worst_index = i;
      }
    }
    report.entries.push_back(entry);
  }
  for (Parameter* p : params) p->tensor.set_requires_grad(true);
  return report;
}

}  // namespace dca
