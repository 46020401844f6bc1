#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dca/tensor.hpp"

namespace dca {

/// Trainable tensor plus the AdamW moment buffers that travel with it.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment, elementwise >= 0
  std::uint64_t step = 0;

  Parameter() = default;
  Parameter(std::string name_, Tensor t)
      : name(std::move(name_)), tensor(std::move(t)), m(tensor.size(), 0.0), v(tensor.size(), 0.0) {
    tensor.set_requires_grad(true);
  }

  // Copies are deep so that a copied model never aliases the original's weights.
  Parameter(const Parameter& o) : name(o.name), tensor(o.tensor.defined() ? o.tensor.clone(true) : Tensor()), m(o.m), v(o.v), step(o.step) {}
  Parameter& operator=(const Parameter& o) {
    if (this != &o) *this = Parameter(o);
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  void zero_grad() { tensor.zero_grad(); }
};

using ParameterRefs = std::vector<Parameter*>;

}  // namespace dca
