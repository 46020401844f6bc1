#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dca {

/// 8-bit interleaved image, row-major, 1 or 3 channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Malformed netpbm input; `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// PPM (P6) / PGM (P5), binary, maxval 255
// ---------------------------------------------------------------------------

inline Image read_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > (1u << 24)) throw FormatError(std::string("header field ") + field + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("expected ") + field, start);
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    throw FormatError("missing P6/P5 magic", 0);
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t w = read_uint("width");
  const std::size_t h = read_uint("height");
  skip_space();
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_uint("maxval");
  if (maxval != 255) throw FormatError("maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (w == 0 || h == 0) throw FormatError("zero image dimension", maxval_at);
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("expected whitespace after maxval", pos);
  ++pos;

  const std::size_t need = w * h * channels;
  if (bytes.size() - pos < need)
    throw FormatError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - pos),
                      bytes.size());
  Image img(w, h, channels);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
  return img;
}

/// Canonical encoding: "P6\n<w> <h>\n255\n" (P5 for single channel) then the raw pixels.
inline std::vector<std::uint8_t> write_ppm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_ppm: channels must be 1 or 3");
  if (img.pixels.size() != img.width * img.height * img.channels)
    throw std::invalid_argument("write_ppm: pixel buffer does not match dimensions");
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a sibling temp file and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return read_ppm(bytes);
  } catch (const FormatError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void save_image(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, write_ppm(img)); }

// ---------------------------------------------------------------------------
// Bilinear resampling (half-pixel centers, edge-clamped)
// ---------------------------------------------------------------------------

struct LinearTap {
  std::size_t lo, hi;
  double t;
};

inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[d] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

/// Bilinear resample of a single-channel double plane.
inline std::vector<double> resize_plane(std::span<const double> plane, std::size_t w, std::size_t h, std::size_t out_w,
                                        std::size_t out_h) {
  const auto xs = linear_taps(w, out_w);
  const auto ys = linear_taps(h, out_h);
  std::vector<double> out(out_w * out_h);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& tx = xs[x];
      const auto& ty = ys[y];
      const double top = plane[ty.lo * w + tx.lo] * (1 - tx.t) + plane[ty.lo * w + tx.hi] * tx.t;
      const double bot = plane[ty.hi * w + tx.lo] * (1 - tx.t) + plane[ty.hi * w + tx.hi] * tx.t;
      out[y * out_w + x] = top * (1 - ty.t) + bot * ty.t;
    }
  return out;
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

/// Resizes to target x target, preserving the channel count.
inline Image resize_bilinear(const Image& img, std::size_t target) {
  if (img.empty()) throw std::invalid_argument("resize_bilinear: empty image");
  if (target < 1) throw std::invalid_argument("resize_bilinear: target must be >= 1");
  Image out(target, target, img.channels);
  std::vector<double> plane(img.width * img.height);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[i * img.channels + c];
    const auto resized = resize_plane(plane, img.width, img.height, target, target);
    for (std::size_t i = 0; i < resized.size(); ++i) out.pixels[i * img.channels + c] = to_u8(resized[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Luma / chroma (BT.601 full-range, 8.8 fixed point)
// ---------------------------------------------------------------------------

struct YCbCr {
  std::uint8_t y, cb, cr;
};

inline YCbCr rgb_to_ycbcr(int r, int g, int b) {
  const int y = (77 * r + 150 * g + 29 * b + 128) >> 8;
  const int cb = ((-43 * r - 85 * g + 128 * b + 128) >> 8) + 128;
  const int cr = ((128 * r - 107 * g - 21 * b + 128) >> 8) + 128;
  auto c = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
  return {c(y), c(cb), c(cr)};
}

inline std::array<std::uint8_t, 3> ycbcr_to_rgb(int y, int cb, int cr) {
  cb -= 128;
  cr -= 128;
  const int r = y + ((359 * cr + 128) >> 8);
  const int g = y - ((88 * cb + 183 * cr + 128) >> 8);
  const int b = y + ((454 * cb + 128) >> 8);
  auto c = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
  return {c(r), c(g), c(b)};
}

/// Luma plane of an image (the image itself when single-channel).
inline std::vector<std::uint8_t> luma_plane(const Image& img) {
  if (img.channels == 1) return img.pixels;
  std::vector<std::uint8_t> y(img.width * img.height);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = rgb_to_ycbcr(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]).y;
  return y;
}

// ---------------------------------------------------------------------------
// CLAHE
// ---------------------------------------------------------------------------

struct ClaheConfig {
  std::size_t tiles = 8;     // per side
  double clip_limit = 2.0;   // multiple of the uniform bin height; +inf disables clipping
  std::size_t bins = 256;

  void validate() const {
    if (tiles < 1) throw std::invalid_argument("ClaheConfig: tiles must be >= 1");
    if (!(clip_limit >= 1.0)) throw std::invalid_argument("ClaheConfig: clip_limit must be >= 1");
    if (bins != 256) throw std::invalid_argument("ClaheConfig: only 256 bins are supported");
  }
};

using ToneMap = std::array<double, 256>;

/// Per-tile transfer functions of a single-channel plane, row-major over the tile grid.
struct TileMaps {
  std::size_t tiles = 0;
  std::vector<std::size_t> x_edges;  // tiles + 1 column boundaries
  std::vector<std::size_t> y_edges;
  std::vector<ToneMap> maps;

  const ToneMap& at(std::size_t tx, std::size_t ty) const { return maps[ty * tiles + tx]; }
};

/**
 * Builds the clipped-histogram mapping of every tile.
 *
 * Each tile histogram is clipped at clip_limit * (tile_pixels / bins); the
 * clipped excess is spread evenly over all bins. The cumulative histogram is
 * then scaled onto the plane's own [min, max] gray range, so a constant plane
 * maps to itself.
 */
inline TileMaps clahe_tile_maps(std::span<const std::uint8_t> plane, std::size_t w, std::size_t h,
                                const ClaheConfig& config) {
  config.validate();
  if (plane.empty() || w == 0 || h == 0) throw std::invalid_argument("clahe: empty image");
  if (config.tiles > w || config.tiles > h)
    throw std::invalid_argument("clahe: " + std::to_string(config.tiles) + " tiles per side exceed image size " +
                                std::to_string(w) + "x" + std::to_string(h));
  const auto [mn, mx] = std::minmax_element(plane.begin(), plane.end());
  const double lo = *mn, hi = *mx;
  const std::size_t t = config.tiles;

  TileMaps out;
  out.tiles = t;
  for (std::size_t i = 0; i <= t; ++i) {
    out.x_edges.push_back(i * w / t);
    out.y_edges.push_back(i * h / t);
  }
  out.maps.resize(t * t);
  for (std::size_t ty = 0; ty < t; ++ty)
    for (std::size_t tx = 0; tx < t; ++tx) {
      std::array<double, 256> hist{};
      for (std::size_t y = out.y_edges[ty]; y < out.y_edges[ty + 1]; ++y)
        for (std::size_t x = out.x_edges[tx]; x < out.x_edges[tx + 1]; ++x) hist[plane[y * w + x]] += 1.0;
      const double n = static_cast<double>((out.y_edges[ty + 1] - out.y_edges[ty]) *
                                           (out.x_edges[tx + 1] - out.x_edges[tx]));
      if (std::isfinite(config.clip_limit)) {
        const double limit = config.clip_limit * n / 256.0;
        double excess = 0.0;
        for (double& b : hist)
          if (b > limit) {
            excess += b - limit;
            b = limit;
          }
        const double share = excess / 256.0;
        for (double& b : hist) b += share;
      }
      ToneMap& map = out.maps[ty * t + tx];
      double cdf = 0.0;
      for (std::size_t v = 0; v < 256; ++v) {
        cdf += hist[v];
        map[v] = std::min(hi, lo + cdf * (hi - lo) / n);
      }
    }
  return out;
}

/// Applies CLAHE to a single-channel plane, bilinearly blending the four
/// nearest tile mappings; pixels outside the tile-center grid clamp to the edge tiles.
inline std::vector<std::uint8_t> clahe_plane(std::span<const std::uint8_t> plane, std::size_t w, std::size_t h,
                                             const ClaheConfig& config) {
  const TileMaps tm = clahe_tile_maps(plane, w, h, config);
  const std::size_t t = tm.tiles;

  // Interpolation position along one axis: lower tile, upper tile, weight of upper.
  auto axis_taps = [t](const std::vector<std::size_t>& edges, std::size_t n) {
    std::vector<LinearTap> taps(n);
    std::vector<double> centers(t);
    for (std::size_t i = 0; i < t; ++i) centers[i] = 0.5 * static_cast<double>(edges[i] + edges[i + 1] - 1);
    for (std::size_t p = 0; p < n; ++p) {
      const double pos = static_cast<double>(p);
      if (pos <= centers.front()) {
        taps[p] = {0, 0, 0.0};
      } else if (pos >= centers.back()) {
        taps[p] = {t - 1, t - 1, 0.0};
      } else {
        std::size_t i = 0;
        while (centers[i + 1] <= pos) ++i;
        taps[p] = {i, i + 1, (pos - centers[i]) / (centers[i + 1] - centers[i])};
      }
    }
    return taps;
  };
  const auto xs = axis_taps(tm.x_edges, w);
  const auto ys = axis_taps(tm.y_edges, h);

  std::vector<std::uint8_t> out(plane.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t v = plane[y * w + x];
      const auto& tx = xs[x];
      const auto& ty = ys[y];
      const double top = tm.at(tx.lo, ty.lo)[v] * (1 - tx.t) + tm.at(tx.hi, ty.lo)[v] * tx.t;
      const double bot = tm.at(tx.lo, ty.hi)[v] * (1 - tx.t) + tm.at(tx.hi, ty.hi)[v] * tx.t;
      out[y * w + x] = to_u8(top * (1 - ty.t) + bot * ty.t);
    }
  return out;
}

/// CLAHE on the luma channel; chroma is carried through unchanged.
inline Image clahe(const Image& img, const ClaheConfig& config) {
  if (img.empty()) throw std::invalid_argument("clahe: empty image");
  if (img.channels == 1) {
    Image out = img;
    out.pixels = clahe_plane(img.pixels, img.width, img.height, config);
    return out;
  }
  const std::size_t n = img.width * img.height;
  std::vector<std::uint8_t> y(n), cb(n), cr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = rgb_to_ycbcr(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]);
    y[i] = p.y;
    cb[i] = p.cb;
    cr[i] = p.cr;
  }
  const auto eq = clahe_plane(y, img.width, img.height, config);
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const auto rgb = ycbcr_to_rgb(eq[i], cb[i], cr[i]);
    std::copy(rgb.begin(), rgb.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return out;
}

}  // namespace dca
