#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dca/autograd.hpp"
#include "dca/random.hpp"
#include "dca/tensor.hpp"

// Differentiable ops over channels-last tensors. Every op computes its output
// eagerly and, when any input requires grad, records a backward rule on the
// tape. Shapes must match exactly; nothing broadcasts.

namespace dca {

enum class Padding { same, valid };

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

/// Output extent and leading pad for one spatial axis. Same padding splits
/// the total symmetrically and puts any odd pixel at the bottom/right.
inline std::pair<std::size_t, std::size_t> conv_axis(std::size_t in, std::size_t k, std::size_t stride,
                                                     Padding padding) {
  if (padding == Padding::valid) {
    if (in < k) return {0, 0};
    return {(in - k) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::ptrdiff_t total =
      std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((out - 1) * stride + k) -
                                   static_cast<std::ptrdiff_t>(in),
                               0);
  return {out, static_cast<std::size_t>(total / 2)};
}

inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                                  Padding padding) {
  const auto [oh, pt] = conv_axis(h, k, stride, padding);
  const auto [ow, pl] = conv_axis(w, k, stride, padding);
  return {oh, ow, pt, pl};
}

/**
 * 2-D cross-correlation: input [N,H,W,Cin], kernel [k,k,Cin,Cout], bias [Cout].
 *
 * Output is [N,H',W',Cout] with H' = ceil(H/stride) for same padding and
 * (H-k)/stride + 1 for valid padding.
 */
inline Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     std::size_t stride = 1, Padding padding = Padding::same) {
  expect_rank(input, 4, "conv2d input");
  expect_rank(kernel, 4, "conv2d kernel");
  expect_rank(bias, 1, "conv2d bias");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k)
    throw ShapeError("conv2d: kernel axis 1 (width " + std::to_string(kernel.dim(1)) +
                     ") differs from axis 0 (height " + std::to_string(k) + ")");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), ci = input.dim(3);
  const std::size_t co = kernel.dim(3);
  if (kernel.dim(2) != ci)
    throw ShapeError("conv2d: input axis 3 (channels) is " + std::to_string(ci) +
                     " but kernel axis 2 expects " + std::to_string(kernel.dim(2)));
  if (bias.dim(0) != co)
    throw ShapeError("conv2d: bias axis 0 is " + std::to_string(bias.dim(0)) +
                     " but kernel axis 3 (filters) is " + std::to_string(co));
  const ConvGeometry g = conv_geometry(h, w, k, stride, padding);
  if (g.out_h == 0 || g.out_w == 0)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than input axis 1/2 (" +
                     std::to_string(h) + "x" + std::to_string(w) + ") under valid padding");

  Tensor out = Tensor::zeros({n, g.out_h, g.out_w, co});
  const double* x = input.values().data();
  const double* kw = kernel.values().data();
  const double* b = bias.values().data();
  double* y = out.mutable_values().data();

  // Visits every (output pixel, tap) pair that lands inside the input.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const std::size_t out_off = ((s * g.out_h + oy) * g.out_w + ox) * co;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t in_off = ((s * h + static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ix)) * ci;
              const std::size_t k_off = (ky * k + kx) * ci * co;
              fn(out_off, in_off, k_off);
            }
          }
        }
  };

  for (std::size_t p = 0; p < n * g.out_h * g.out_w; ++p) std::copy(b, b + co, y + p * co);
  for_each_tap([&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
    double* yo = y + out_off;
    for (std::size_t c = 0; c < ci; ++c) {
      const double xv = x[in_off + c];
      const double* kr = kw + k_off + c * co;
      for (std::size_t o = 0; o < co; ++o) yo[o] += xv * kr[o];
    }
  });

  if (detail::any_requires_grad({&input, &kernel, &bias})) {
    out.set_requires_grad(true);
    tape.record("conv2d", {input, kernel, bias}, out,
                [input, kernel, bias, out, for_each_tap, n, ci, co, g]() mutable {
                  const double* gy = out.grad().data();
                  const double* x = input.values().data();
                  const double* kw = kernel.values().data();
                  double* gx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
                  double* gk = kernel.requires_grad() ? kernel.mutable_grad().data() : nullptr;
                  if (bias.requires_grad()) {
                    double* gb = bias.mutable_grad().data();
                    for (std::size_t p = 0; p < n * g.out_h * g.out_w; ++p)
                      for (std::size_t o = 0; o < co; ++o) gb[o] += gy[p * co + o];
                  }
                  if (!gx && !gk) return;
                  for_each_tap([&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
                    const double* go = gy + out_off;
                    for (std::size_t c = 0; c < ci; ++c) {
                      const std::size_t kr = k_off + c * co;
                      if (gx) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < co; ++o) acc += go[o] * kw[kr + o];
                        gx[in_off + c] += acc;
                      }
                      if (gk) {
                        const double xv = x[in_off + c];
                        for (std::size_t o = 0; o < co; ++o) gk[kr + o] += xv * go[o];
                      }
                    }
                  });
                });
  }
  return out;
}

/// Affine map: input [N,Din] times weight [Din,Dout] plus bias [Dout].
inline Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  expect_rank(input, 2, "dense input");
  expect_rank(weight, 2, "dense weight");
  expect_rank(bias, 1, "dense bias");
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weight.dim(1);
  if (weight.dim(0) != din)
    throw ShapeError("dense: input axis 1 is " + std::to_string(din) + " but weight axis 0 is " +
                     std::to_string(weight.dim(0)));
  if (bias.dim(0) != dout)
    throw ShapeError("dense: bias axis 0 is " + std::to_string(bias.dim(0)) +
                     " but weight axis 1 is " + std::to_string(dout));

  Tensor out = Tensor::zeros({n, dout});
  const double* x = input.values().data();
  const double* wt = weight.values().data();
  const double* b = bias.values().data();
  double* y = out.mutable_values().data();
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y + r * dout;
    std::copy(b, b + dout, yr);
    for (std::size_t i = 0; i < din; ++i) {
      const double xv = x[r * din + i];
      const double* wr = wt + i * dout;
      for (std::size_t o = 0; o < dout; ++o) yr[o] += xv * wr[o];
    }
  }

  if (detail::any_requires_grad({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape.record("dense", {input, weight, bias}, out, [input, weight, bias, out, n, din, dout]() mutable {
      const double* gy = out.grad().data();
      const double* x = input.values().data();
      const double* wt = weight.values().data();
      if (bias.requires_grad()) {
        double* gb = bias.mutable_grad().data();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < dout; ++o) gb[o] += gy[r * dout + o];
      }
      double* gx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
      double* gw = weight.requires_grad() ? weight.mutable_grad().data() : nullptr;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < din; ++i) {
          const double* gr = gy + r * dout;
          if (gx) {
            double acc = 0.0;
            for (std::size_t o = 0; o < dout; ++o) acc += gr[o] * wt[i * dout + o];
            gx[r * din + i] += acc;
          }
          if (gw) {
            const double xv = x[r * din + i];
            for (std::size_t o = 0; o < dout; ++o) gw[i * dout + o] += xv * gr[o];
          }
        }
    });
  }
  return out;
}

enum class Activation { relu, sigmoid };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Elementwise relu or sigmoid. relu'(0) is taken as 0.
inline Tensor pointwise_activation(Tape& tape, Activation kind, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto y = out.mutable_values();
  if (kind == Activation::relu)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  else
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid(xv[i]);

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(kind == Activation::relu ? "relu" : "sigmoid", {x}, out, [x, out, kind]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      auto xv = x.values();
      auto y = out.values();
      if (kind == Activation::relu)
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] > 0.0 ? gy[i] : 0.0;
      else
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

inline Tensor relu(Tape& tape, const Tensor& x) { return pointwise_activation(tape, Activation::relu, x); }
inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return pointwise_activation(tape, Activation::sigmoid, x);
}

/// Softmax over the H*W positions of every (sample, channel) slice of [N,H,W,C].
inline Tensor spatial_softmax(Tape& tape, const Tensor& x) {
  expect_rank(x, 4, "spatial_softmax");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto y = out.mutable_values();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = s * hw * c + ch;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < hw; ++p) mx = std::max(mx, xv[base + p * c]);
      double total = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        const double e = std::exp(xv[base + p * c] - mx);
        y[base + p * c] = e;
        total += e;
      }
      for (std::size_t p = 0; p < hw; ++p) y[base + p * c] /= total;
    }

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("spatial_softmax", {x}, out, [x, out, n, hw, c]() mutable {
      auto gy = out.grad();
      auto y = out.values();
      auto gx = x.mutable_grad();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = s * hw * c + ch;
          double dot = 0.0;
          for (std::size_t p = 0; p < hw; ++p) dot += gy[base + p * c] * y[base + p * c];
          for (std::size_t p = 0; p < hw; ++p)
            gx[base + p * c] += y[base + p * c] * (gy[base + p * c] - dot);
        }
    });
  }
  return out;
}

enum class Elementwise { mul, add };

inline Tensor elementwise(Tape& tape, Elementwise op, const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, op == Elementwise::mul ? "mul" : "add");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto y = out.mutable_values();
  if (op == Elementwise::mul)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  else
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];

  if (detail::any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record(op == Elementwise::mul ? "mul" : "add", {a, b}, out, [a, b, out, op]() mutable {
      auto gy = out.grad();
      // a and b may alias (x * x); read values before accumulating.
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += op == Elementwise::mul ? gy[i] * bv[i] : gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += op == Elementwise::mul ? gy[i] * av[i] : gy[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, Elementwise::mul, a, b);
}
inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, Elementwise::add, a, b);
}

/// Per-channel spatial mean: [N,H,W,C] -> [N,C].
inline Tensor global_average_pool(Tape& tape, const Tensor& x) {
  expect_rank(x, 4, "global_average_pool");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  auto xv = x.values();
  auto y = out.mutable_values();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) y[s * c + ch] += xv[(s * hw + p) * c + ch];
  const double scale = 1.0 / static_cast<double>(hw);
  for (double& v : y) v *= scale;

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("global_average_pool", {x}, out, [x, out, n, hw, c, scale]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) gx[(s * hw + p) * c + ch] += gy[s * c + ch] * scale;
    });
  }
  return out;
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); otherwise the input is returned as is.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;

  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;

  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("dropout", {x}, out, [x, out, mask = std::move(mask)]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
  }
  return out;
}

/// Row softmax of [N,C] logits.
inline Tensor softmax_rows(Tape& tape, const Tensor& logits) {
  expect_rank(logits, 2, "softmax_rows");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out = Tensor::zeros(logits.shape());
  auto z = logits.values();
  auto p = out.mutable_values();
  for (std::size_t r = 0; r < n; ++r) {
    const double mx = *std::max_element(z.begin() + r * c, z.begin() + (r + 1) * c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += p[r * c + j] = std::exp(z[r * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) p[r * c + j] /= total;
  }

  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("softmax_rows", {logits}, out, [logits, out, n, c]() mutable {
      auto gy = out.grad();
      auto p = out.values();
      auto gz = logits.mutable_grad();
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[r * c + j] * p[r * c + j];
        for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += p[r * c + j] * (gy[r * c + j] - dot);
      }
    });
  }
  return out;
}

/// Sum of all elements as a {1} tensor.
inline Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("sum", {x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return out;
}

/// Multiplies every element by a constant.
inline Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor;
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("scale", {x}, out, [x, out, factor]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return out;
}

inline constexpr double kLogClamp = 1e-12;

/**
 * Mean cross-entropy of row probabilities against one-hot labels:
 * -(1/N) sum_i sum_c y_ic log(p_ic + 1e-12).
 *
 * The 1e-12 clamp keeps saturated rows finite.
 */
inline Tensor cross_entropy(Tape& tape, const Tensor& probabilities, const Tensor& labels) {
  expect_rank(probabilities, 2, "cross_entropy probabilities");
  expect_same_shape(probabilities, labels, "cross_entropy");
  const std::size_t n = labels.dim(0), c = labels.dim(1);
  auto y = labels.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = y[r * c + j];
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        throw std::invalid_argument("cross_entropy: label row " + std::to_string(r) + " is not one-hot");
    }
    if (ones != 1)
      throw std::invalid_argument("cross_entropy: label row " + std::to_string(r) + " is not one-hot");
  }

  auto p = probabilities.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (y[i] != 0.0) total -= y[i] * std::log(p[i] + kLogClamp);
  Tensor out = Tensor::scalar(total / static_cast<double>(n));

  if (probabilities.requires_grad()) {
    out.set_requires_grad(true);
    tape.record("cross_entropy", {probabilities, labels}, out, [probabilities, labels, out, n]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      auto p = probabilities.values();
      auto y = labels.values();
      auto gp = probabilities.mutable_grad();
      for (std::size_t i = 0; i < gp.size(); ++i)
        if (y[i] != 0.0) gp[i] -= g * y[i] / (p[i] + kLogClamp);
    });
  }
  return out;
}

/// One-hot [N,C] label matrix.
inline Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t = Tensor::zeros({labels.size(), classes});
  auto v = t.mutable_values();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[r]) + " out of range");
    v[r * classes + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return t;
}

}  // namespace dca
