#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dca {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes disagree. The message names the offending axis.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/**
 * Dense row-major array of doubles with an optional gradient buffer.
 *
 * Tensor is a shared handle: copies alias the same storage, so an op output
 * captured by the tape is the same object the caller holds. Values are
 * treated as immutable once an op has produced them; only parameters are
 * written in place (by the optimizer), and only between passes.
 */
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<Storage>()) {
    if (shape.empty() || shape.size() > 4)
      throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (shape[i] == 0) throw ShapeError("axis " + std::to_string(i) + " has zero extent");
    if (element_count(shape) != values.size())
      throw ShapeError("shape " + to_string(shape) + " needs " +
                       std::to_string(element_count(shape)) + " values, got " +
                       std::to_string(values.size()));
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  /// In-place write access; reserved for parameters and freshly built op outputs.
  std::span<double> mutable_values() { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->values[0];
  }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }

  void set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    if (flag && impl_->grad.size() != impl_->values.size())
      impl_->grad.assign(impl_->values.size(), 0.0);
    if (!flag) impl_->grad.clear();
  }

  std::span<const double> grad() const { return impl_->grad; }

  /// Write access to the gradient buffer; marks the gradient as fresh.
  std::span<double> mutable_grad() const {
    if (!impl_->requires_grad) throw std::logic_error("tensor does not require grad");
    impl_->grad_fresh = true;
    return impl_->grad;
  }

  /// True when something wrote the gradient since the last zero_grad().
  bool grad_fresh() const noexcept { return impl_ && impl_->grad_fresh; }

  void zero_grad() const {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    impl_->grad_fresh = false;
  }

  /// Deep copy of shape and values; the copy has no gradient history.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->values, requires_grad);
  }

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  bool all_finite() const {
    return std::all_of(impl_->values.begin(), impl_->values.end(),
                       [](double v) { return std::isfinite(v); });
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_fresh = false;
  };
  std::shared_ptr<Storage> impl_;
};

inline void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
}

inline void expect_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != b.rank())
    throw ShapeError(std::string(what) + ": rank mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw ShapeError(std::string(what) + ": axis " + std::to_string(i) + " differs (" +
                       std::to_string(a.dim(i)) + " vs " + std::to_string(b.dim(i)) + ")");
}

}  // namespace dca
