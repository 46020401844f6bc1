#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dca/image.hpp"
#include "dca/model.hpp"

namespace dca {

/// Row-major saliency plane with values in [0,1]; max is 1 unless all zero.
struct Heatmap {
  std::size_t width = 0, height = 0;
  std::vector<double> values;
  std::string source;       // "gradcam++", "f_s", "f_g", "f_c", "f_a" or "f_r"
  bool degenerate = false;  // no signal: zero gradient, zero map or constant map

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

/**
 * GradCAM++ over one [h,w,D] activation block A with gradients G = dScore/dA:
 *   alpha = G^2 / (2 G^2 + sum_ij(A) G^3),  w_k = sum_ij alpha relu(G),
 *   map = relu(sum_k w_k A_k).
 * Alpha is 0 where its denominator is 0. The result is not normalized.
 */
inline std::vector<double> gradcam_pp_map(std::span<const double> a, std::span<const double> g, std::size_t h,
                                          std::size_t w, std::size_t d) {
  if (a.size() != h * w * d || g.size() != a.size())
    throw std::invalid_argument("gradcam_pp_map: activations and gradients must both hold h*w*d values");
  const std::size_t hw = h * w;
  std::vector<double> weight(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    double total = 0;
    for (std::size_t p = 0; p < hw; ++p) total += a[p * d + k];
    for (std::size_t p = 0; p < hw; ++p) {
      const double gi = g[p * d + k];
      const double g2 = gi * gi;
      const double denom = 2 * g2 + total * g2 * gi;
      const double alpha = denom != 0 ? g2 / denom : 0.0;
      weight[k] += alpha * std::max(gi, 0.0);
    }
  }
  std::vector<double> map(hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += weight[k] * a[p * d + k];
    map[p] = std::max(s, 0.0);
  }
  return map;
}

namespace detail {

inline Heatmap upscale(const std::vector<double>& plane, std::size_t w, std::size_t h, std::size_t side, std::string source) {
  Heatmap m;
  m.width = m.height = side;
  m.source = std::move(source);
  m.values = resize_plane(plane, w, h, side, side);
  return m;
}

inline void normalize_max(Heatmap& m) {
  const double mx = *std::max_element(m.values.begin(), m.values.end());
  if (!(mx > 0)) {
    std::fill(m.values.begin(), m.values.end(), 0.0);
    m.degenerate = true;
    return;
  }
  for (double& v : m.values) v = std::clamp(v / mx, 0.0, 1.0);
}

inline void normalize_min_max(Heatmap& m) {
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double l = *lo, span = *hi - *lo;
  if (!(span > 0)) {
    std::fill(m.values.begin(), m.values.end(), 0.0);
    m.degenerate = true;
    return;
  }
  for (double& v : m.values) v = std::clamp((v - l) / span, 0.0, 1.0);
}

}  // namespace detail

/// GradCAM++ on the attended features f_dca for the pre-softmax score of each
/// image's target class, upsampled to the input size. Every image only sees its
/// own gradients, so a map does not depend on batch composition.
inline std::vector<Heatmap> gradcam_pp(DcaModel& model, const Tensor& images, const std::vector<int>& targets) {
  const std::size_t n = images.dim(0), classes = model.config().head.num_classes;
  if (targets.size() != n) throw std::invalid_argument("gradcam_pp: one target class per image required");
  Tensor mask = Tensor::zeros({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= classes)
      throw std::invalid_argument("gradcam_pp: target class " + std::to_string(targets[i]) + " out of range");
    mask.mutable_values()[i * classes + static_cast<std::size_t>(targets[i])] = 1.0;
  }
  std::vector<Heatmap> out;
  {
    Tape tape;
    Rng unused(0);
    const auto r = model.forward(tape, images, false, unused);
    tape.backward(sum(tape, mul(tape, r.logits, mask)));
    const Tensor& a = r.maps.f_dca;
    const std::size_t h = a.dim(1), w = a.dim(2), d = a.dim(3), per = h * w * d;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ai = a.values().subspan(i * per, per), gi = a.grad().subspan(i * per, per);
      const bool flat = std::all_of(gi.begin(), gi.end(), [](double v) { return v == 0.0; });
      Heatmap m = detail::upscale(gradcam_pp_map(ai, gi, h, w, d), w, h, images.dim(1), "gradcam++");
      detail::normalize_max(m);
      m.degenerate = m.degenerate || flat;
      out.push_back(std::move(m));
    }
  }
  for (Parameter* p : model.parameters()) p->zero_grad();
  return out;
}

/// Channel-mean of each available attention map, upsampled and min-max scaled.
inline std::vector<Heatmap> attention_heatmaps(const AttentionMaps& maps, std::size_t sample, std::size_t side) {
  std::vector<std::pair<std::string, const Tensor*>> named;
  if (maps.f_s) named.emplace_back("f_s", &*maps.f_s);
  if (maps.f_g) named.emplace_back("f_g", &*maps.f_g);
  named.emplace_back("f_c", &maps.f_c);
  if (maps.f_a) named.emplace_back("f_a", &*maps.f_a);
  named.emplace_back("f_r", &maps.f_r);

  std::vector<Heatmap> out;
  for (const auto& [name, t] : named) {
    const std::size_t h = t->dim(1), w = t->dim(2), d = t->dim(3);
    const auto v = t->values().subspan(sample * h * w * d, h * w * d);
    std::vector<double> plane(h * w, 0.0);
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t k = 0; k < d; ++k) plane[p] += v[p * d + k];
      plane[p] /= static_cast<double>(d);
    }
    Heatmap m = detail::upscale(plane, w, h, side, name);
    detail::normalize_min_max(m);
    out.push_back(std::move(m));
  }
  return out;
}

inline Image heatmap_to_pgm(const Heatmap& map) {
  Image img(map.width, map.height, 1);
  for (std::size_t i = 0; i < map.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.values[i], 0.0, 1.0) * 255.0));
  return img;
}

/// Red channel becomes floor((1 - m/2) r + m/2 * 255); green and blue are kept.
inline Image heatmap_overlay(const Heatmap& map, const Image& base) {
  if (base.width != map.width || base.height != map.height)
    throw std::invalid_argument("heatmap_overlay: map is " + std::to_string(map.width) + "x" +
                                std::to_string(map.height) + " but image is " + std::to_string(base.width) + "x" +
                                std::to_string(base.height));
  if (base.channels != 3) throw std::invalid_argument("heatmap_overlay: base image must be RGB");
  Image out = base;
  for (std::size_t y = 0; y < base.height; ++y)
    for (std::size_t x = 0; x < base.width; ++x) {
      const double m = std::clamp(map.at(x, y), 0.0, 1.0);
      const double r = base.at(x, y, 0);
      out.at(x, y, 0) = static_cast<std::uint8_t>(std::floor((1.0 - 0.5 * m) * r + 0.5 * m * 255.0));
    }
  return out;
}

/// Writes <stem>.pgm (the map) and <stem>.ppm (overlay on base).
inline void export_heatmap(const Heatmap& map, const Image& base, const std::filesystem::path& stem) {
  const Image overlay = heatmap_overlay(map, base);
  save_image(std::filesystem::path(stem).concat(".pgm"), heatmap_to_pgm(map));
  save_image(std::filesystem::path(stem).concat(".ppm"), overlay);
}

}  // namespace dca
