#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dca/image.hpp"
#include "dca/random.hpp"

namespace dca {

inline constexpr int kNormal = 0;
inline constexpr int kAbnormal = 1;

inline const char* class_dir_name(int label) { return label == kAbnormal ? "abnormal" : "normal"; }

/// Pixel bounding box, inclusive on both ends.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  long area() const { return static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1); }
  bool operator==(const BoundingBox&) const = default;
};

/// A bright specular spot: disc of `radius` pixels around (cx, cy).
struct Highlight {
  double cx = 0, cy = 0, radius = 0;
};

struct SyntheticConfig {
  std::size_t count = 200;
  std::size_t size = 64;
  double abnormal_fraction = 0.5;
  double blob_radius_min = 0.08;  // fraction of image side
  double blob_radius_max = 0.25;
  std::size_t highlight_min = 0;
  std::size_t highlight_max = 4;
  double noise_std = 0.02;  // fraction of the 0..255 range
  std::uint64_t seed = 1;

  void validate() const {
    if (count < 1) throw std::invalid_argument("SyntheticConfig: count must be >= 1");
    if (size < 8) throw std::invalid_argument("SyntheticConfig: size must be >= 8");
    if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0))
      throw std::invalid_argument("SyntheticConfig: abnormal_fraction must lie in (0,1)");
    if (!(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max && blob_radius_max < 0.5))
      throw std::invalid_argument("SyntheticConfig: blob radii must satisfy 0 < min <= max < 0.5");
    if (highlight_min > highlight_max)
      throw std::invalid_argument("SyntheticConfig: highlight_min exceeds highlight_max");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("SyntheticConfig: noise_std must be >= 0");
  }
};

struct SyntheticSample {
  std::string path;  // relative to the corpus root, e.g. "abnormal/00003.ppm"
  int label = kNormal;
  std::optional<BoundingBox> box;  // abnormal samples only
  std::vector<Highlight> highlights;
  Image image;
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb jitter(Rng& rng, Rgb base, double amount) {
  return {base.r + rng.uniform(-amount, amount), base.g + rng.uniform(-amount, amount),
          base.b + rng.uniform(-amount, amount)};
}

}  // namespace detail

/// Renders one endoscopy-like frame: pink mucosa under uneven illumination,
/// an optional orange-hued textured elliptical blob, specular spots and pixel noise.
inline SyntheticSample render_synthetic(const SyntheticConfig& config, int label, Rng& rng) {
  using detail::Rgb;
  const std::size_t s = config.size;
  const double side = static_cast<double>(s);
  SyntheticSample out;
  out.label = label;
  out.image = Image(s, s, 3);

  const Rgb mucosa = detail::jitter(rng, {205, 112, 104}, 14);
  const double light_x = rng.uniform(0.3, 0.7) * side, light_y = rng.uniform(0.3, 0.7) * side;
  const double fold_fx = rng.uniform(0.05, 0.2), fold_fy = rng.uniform(0.05, 0.2), fold_phase = rng.uniform(0, 6.3);

  struct Blob {
    double cx, cy, rx, ry, fx, fy, phase;
    Rgb color;
  };
  std::optional<Blob> blob;
  if (label == kAbnormal) {
    Blob b;
    b.rx = rng.uniform(config.blob_radius_min, config.blob_radius_max) * side;
    b.ry = std::clamp(b.rx * rng.uniform(0.75, 1.33), config.blob_radius_min * side, config.blob_radius_max * side);
    b.cx = rng.uniform(b.rx, side - 1 - b.rx);
    b.cy = rng.uniform(b.ry, side - 1 - b.ry);
    b.fx = rng.uniform(0.6, 1.2);
    b.fy = rng.uniform(0.6, 1.2);
    b.phase = rng.uniform(0, 6.3);
    b.color = detail::jitter(rng, {196, 146, 70}, 12);
    blob = b;
    out.box = BoundingBox{static_cast<int>(std::floor(b.cx - b.rx)), static_cast<int>(std::floor(b.cy - b.ry)),
                          std::min(static_cast<int>(s) - 1, static_cast<int>(std::ceil(b.cx + b.rx))),
                          std::min(static_cast<int>(s) - 1, static_cast<int>(std::ceil(b.cy + b.ry)))};
  }

  const std::size_t spots = config.highlight_min + rng.below(config.highlight_max - config.highlight_min + 1);
  for (std::size_t i = 0; i < spots; ++i)
    out.highlights.push_back({rng.uniform(0, side - 1), rng.uniform(0, side - 1), rng.uniform(0.025, 0.055) * side});

  const double max_d2 = 2.0 * side * side;
  const double noise = config.noise_std * 255.0;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const double d2 = (px - light_x) * (px - light_x) + (py - light_y) * (py - light_y);
      const double light = (1.0 - 0.45 * d2 / max_d2) * (1.0 + 0.06 * std::sin(fold_fx * px + fold_fy * py + fold_phase));
      Rgb c{mucosa.r * light, mucosa.g * light, mucosa.b * light};

      if (blob) {
        const double ux = (px - blob->cx) / blob->rx, uy = (py - blob->cy) / blob->ry;
        const double rn = std::sqrt(ux * ux + uy * uy);
        const double alpha = std::clamp((1.0 - rn) * 5.0, 0.0, 1.0);
        if (alpha > 0.0) {
          const double tex = 1.0 + 0.12 * std::sin(blob->fx * px + blob->phase) * std::sin(blob->fy * py);
          const Rgb bc{blob->color.r * light * tex, blob->color.g * light * tex, blob->color.b * light * tex};
          c = {c.r + alpha * (bc.r - c.r), c.g + alpha * (bc.g - c.g), c.b + alpha * (bc.b - c.b)};
        }
      }
      for (const auto& h : out.highlights) {
        const double d = std::hypot(px - h.cx, py - h.cy);
        const double alpha = std::clamp(1.6 * (1.0 - d / h.radius), 0.0, 1.0);
        if (alpha > 0.0) c = {c.r + alpha * (250 - c.r), c.g + alpha * (250 - c.g), c.b + alpha * (248 - c.b)};
      }
      out.image.at(x, y, 0) = to_u8(c.r + rng.normal(0, noise));
      out.image.at(x, y, 1) = to_u8(c.g + rng.normal(0, noise));
      out.image.at(x, y, 2) = to_u8(c.b + rng.normal(0, noise));
    }
  return out;
}

/// Generates the whole corpus in memory; a pure function of the config.
inline std::vector<SyntheticSample> synthesize(const SyntheticConfig& config) {
  config.validate();
  Rng master(config.seed);
  const auto abnormal = static_cast<std::size_t>(std::llround(static_cast<double>(config.count) * config.abnormal_fraction));
  std::vector<int> labels(config.count, kNormal);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(abnormal, config.count)), kAbnormal);
  master.shuffle(labels);

  std::vector<SyntheticSample> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    Rng rng(master.fork());
    SyntheticSample sample = render_synthetic(config, labels[i], rng);
    std::ostringstream name;
    name << class_dir_name(labels[i]) << '/' << std::string(5 - std::min<std::size_t>(5, std::to_string(i).size()), '0')
         << i << ".ppm";
    sample.path = name.str();
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: UTF-8 CSV "path,label,x0,y0,x1,y1", box fields empty for normal rows
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string path;
  int label = kNormal;
  std::optional<BoundingBox> box;
};

inline std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::ostringstream os;
  os << "path,label,x0,y0,x1,y1\n";
  for (const auto& r : rows) {
    os << r.path << ',' << r.label << ',';
    if (r.box)
      os << r.box->x0 << ',' << r.box->y0 << ',' << r.box->x1 << ',' << r.box->y1;
    else
      os << ",,,";
    os << '\n';
  }
  return os.str();
}

inline std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::vector<ManifestRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("path,", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 6 fields");
    ManifestRow r;
    r.path = f[0];
    try {
      r.label = std::stoi(f[1]);
      if (!f[2].empty()) r.box = BoundingBox{std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stoi(f[5])};
    } catch (const std::logic_error&) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Writes <out_dir>/{normal,abnormal}/NNNNN.ppm plus <out_dir>/manifest.csv.
inline std::vector<ManifestRow> generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_dir) {
  const auto corpus = synthesize(config);
  std::error_code ec;
  for (const char* sub : {"normal", "abnormal"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw std::runtime_error("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  std::vector<ManifestRow> rows;
  for (const auto& s : corpus) {
    save_image(out_dir / s.path, s.image);
    rows.push_back({s.path, s.label, s.box});
  }
  write_file_atomic(out_dir / "manifest.csv", format_manifest(rows));
  return rows;
}

// ---------------------------------------------------------------------------
// Directory loader
// ---------------------------------------------------------------------------

struct Sample {
  std::filesystem::path path;
  std::string relative;
  int label = kNormal;
  std::optional<BoundingBox> box;
};

struct DatasetListing {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
};

/// Lists <root>/<class>/<name>.{ppm,pgm}. Class directories must be "normal" or
/// "abnormal"; every image is parsed once so unreadable files fail here, with their path.
inline DatasetListing load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  DatasetListing out;
  std::map<std::string, int> seen;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    int label;
    if (name == "normal")
      label = kNormal;
    else if (name == "abnormal")
      label = kAbnormal;
    else
      throw std::runtime_error("unknown class directory " + entry.path().string());
    seen[name] = 0;
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const auto ext = f.path().extension().string();
      if (!f.is_regular_file() || (ext != ".ppm" && ext != ".pgm")) continue;
      load_image(f.path());
      out.samples.push_back({f.path(), name + "/" + f.path().filename().string(), label, std::nullopt});
      ++seen[name];
    }
  }
  for (const char* cls : {"normal", "abnormal"}) {
    auto it = seen.find(cls);
    if (it == seen.end())
      out.warnings.push_back(std::string("class directory '") + cls + "' is missing");
    else if (it->second == 0)
      out.warnings.push_back(std::string("class directory '") + cls + "' is empty");
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [](const Sample& a, const Sample& b) { return a.relative < b.relative; });

  const auto manifest = root / "manifest.csv";
  if (fs::exists(manifest)) {
    const auto bytes = read_file(manifest);
    std::map<std::string, ManifestRow> by_path;
    for (auto& r : parse_manifest(std::string(bytes.begin(), bytes.end()))) by_path[r.path] = r;
    for (auto& s : out.samples) {
      auto it = by_path.find(s.relative);
      if (it == by_path.end()) continue;
      if (it->second.label != s.label)
        throw std::runtime_error("manifest label for " + s.relative + " disagrees with its directory");
      s.box = it->second.box;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified k-fold
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold_of;  // sample index -> fold id

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != fold) out.push_back(i);
    return out;
  }
};

/// Shuffles each class with the seed and deals it round-robin over the folds,
/// continuing the deal position across classes so fold sizes stay balanced.
inline FoldPlan kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (int cls : {kNormal, kAbnormal}) {
    const std::size_t n = by_class.count(cls) ? by_class[cls].size() : 0;
    if (k > n)
      throw std::invalid_argument("kfold_split: k=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                  " samples of class " + std::to_string(cls));
  }
  FoldPlan plan{k, seed, std::vector<std::size_t>(labels.size(), 0)};
  Rng rng(seed);
  std::size_t deal = 0;
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(idx);
    for (std::size_t i : idx) plan.fold_of[i] = deal++ % k;
  }
  return plan;
}

inline FoldPlan kfold_split(const std::vector<Sample>& samples, std::size_t k, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return kfold_split(labels, k, seed);
}

}  // namespace dca
