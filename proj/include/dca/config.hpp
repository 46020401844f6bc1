#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dca/data.hpp"
#include "dca/image.hpp"
#include "dca/model.hpp"
#include "dca/optim.hpp"

namespace dca {

using json = nlohmann::ordered_json;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything a run depends on besides the dataset bytes.
struct RunConfig {
  ModelConfig model;
  AdamWConfig optimizer;
  ClaheConfig clahe;
  SyntheticConfig synthetic;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  std::size_t k_folds = 5;
  std::uint64_t seed = 1;
  std::string data_dir = "data";
  std::string output_dir = "out";

  void validate() {
    model.validate();
    optimizer.validate();
    clahe.validate();
    synthetic.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (k_folds < 2) throw ConfigError("k_folds must be >= 2");
  }
};

static_assert(std::is_same_v<std::uint64_t, std::size_t> || sizeof(std::size_t) == 8);

namespace detail {

/// Reads keys of one JSON object; whatever was not read is an unknown key.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(path(key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  /// null stands for +infinity, which JSON cannot spell.
  void read_unbounded(const char* key, double& out) {
    if (const json* v = find(key); v && v->is_null())
      out = std::numeric_limits<double>::infinity();
    else
      read(key, out);
  }
  void read(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline json unbounded(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

}  // namespace detail

inline json to_json(const BackboneConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.blocks) blocks.push_back({{"out_channels", b.out_channels}, {"stride", b.stride}});
  return {{"input_size", c.input_size}, {"blocks", blocks}, {"kernel", c.kernel}};
}

inline json to_json(const DcaConfig& c) {
  return {{"spatial_kernel", c.spatial_kernel}, {"refine_kernel", c.refine_kernel},
          {"enable_spatial", c.enable_spatial}, {"enable_gated", c.enable_gated},
          {"enable_refine", c.enable_refine}};
}

inline json to_json(const HeadConfig& c) {
  return {{"hidden_units", c.hidden_units}, {"dropout_rate", c.dropout_rate}, {"num_classes", c.num_classes},
          {"unit_norm", c.unit_norm}};
}

inline json to_json(const ModelConfig& c) {
  return {{"backbone", to_json(c.backbone)}, {"dca", to_json(c.dca)}, {"head", to_json(c.head)}};
}

inline json to_json(const AdamWConfig& c) {
  return {{"eta", c.eta},         {"beta1", c.beta1},   {"beta2", c.beta2},
          {"epsilon", c.epsilon}, {"lambda", c.lambda}, {"bias_correction", c.bias_correction}};
}

inline json to_json(const ClaheConfig& c) {
  return {{"tiles", c.tiles}, {"clip_limit", detail::unbounded(c.clip_limit)}};
}

inline json to_json(const SyntheticConfig& c) {
  return {{"count", c.count},
          {"size", c.size},
          {"abnormal_fraction", c.abnormal_fraction},
          {"blob_radius_min", c.blob_radius_min},
          {"blob_radius_max", c.blob_radius_max},
          {"highlight_min", c.highlight_min},
          {"highlight_max", c.highlight_max},
          {"noise_std", c.noise_std},
          {"seed", c.seed}};
}

inline json to_json(const RunConfig& c) {
  json j = to_json(c.model);
  j["optimizer"] = to_json(c.optimizer);
  j["clahe"] = to_json(c.clahe);
  j["synthetic"] = to_json(c.synthetic);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["k_folds"] = c.k_folds;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
  return j;
}

inline void read_backbone(detail::ObjectReader& r, const char* key, BackboneConfig& c) {
  const json* v = r.find(key);
  if (!v) return;
  detail::ObjectReader o(*v, r.path(key));
  o.read("input_size", c.input_size);
  o.read("kernel", c.kernel);
  if (const json* blocks = o.find("blocks")) {
    if (!blocks->is_array()) throw ConfigError(o.path("blocks") + ": expected an array");
    c.blocks.clear();
    for (std::size_t i = 0; i < blocks->size(); ++i) {
      detail::ObjectReader b((*blocks)[i], o.path("blocks") + "[" + std::to_string(i) + "]");
      BackboneBlock block;
      b.read("out_channels", block.out_channels);
      b.read("stride", block.stride);
      b.finish();
      c.blocks.push_back(block);
    }
  }
  o.finish();
}

inline void read_dca(detail::ObjectReader& r, const char* key, DcaConfig& c) {
  const json* v = r.find(key);
  if (!v) return;
  detail::ObjectReader o(*v, r.path(key));
  o.read("spatial_kernel", c.spatial_kernel);
  o.read("refine_kernel", c.refine_kernel);
  o.read("enable_spatial", c.enable_spatial);
  o.read("enable_gated", c.enable_gated);
  o.read("enable_refine", c.enable_refine);
  o.finish();
}

inline void read_head(detail::ObjectReader& r, const char* key, HeadConfig& c) {
  const json* v = r.find(key);
  if (!v) return;
  detail::ObjectReader o(*v, r.path(key));
  o.read("hidden_units", c.hidden_units);
  o.read("dropout_rate", c.dropout_rate);
  o.read("num_classes", c.num_classes);
  o.read("unit_norm", c.unit_norm);
  o.finish();
}

inline void read_model_keys(detail::ObjectReader& r, ModelConfig& c) {
  read_backbone(r, "backbone", c.backbone);
  read_dca(r, "dca", c.dca);
  read_head(r, "head", c.head);
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  detail::ObjectReader r(j, "model");
  read_model_keys(r, c);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Missing keys keep their defaults; unknown keys and mistyped values are rejected.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "config");
  read_model_keys(r, c.model);
  if (const json* v = r.find("optimizer")) {
    detail::ObjectReader o(*v, "config.optimizer");
    o.read("eta", c.optimizer.eta);
    o.read("beta1", c.optimizer.beta1);
    o.read("beta2", c.optimizer.beta2);
    o.read("epsilon", c.optimizer.epsilon);
    o.read("lambda", c.optimizer.lambda);
    o.read("bias_correction", c.optimizer.bias_correction);
    o.finish();
  }
  if (const json* v = r.find("clahe")) {
    detail::ObjectReader o(*v, "config.clahe");
    o.read("tiles", c.clahe.tiles);
    o.read_unbounded("clip_limit", c.clahe.clip_limit);
    o.finish();
  }
  if (const json* v = r.find("synthetic")) {
    detail::ObjectReader o(*v, "config.synthetic");
    auto& s = c.synthetic;
    o.read("count", s.count);
    o.read("size", s.size);
    o.read("abnormal_fraction", s.abnormal_fraction);
    o.read("blob_radius_min", s.blob_radius_min);
    o.read("blob_radius_max", s.blob_radius_max);
    o.read("highlight_min", s.highlight_min);
    o.read("highlight_max", s.highlight_max);
    o.read("noise_std", s.noise_std);
    o.read("seed", s.seed);
    o.finish();
  }
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("k_folds", c.k_folds);
  r.read("seed", c.seed);
  r.read("data_dir", c.data_dir);
  r.read("output_dir", c.output_dir);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return run_config_from_json(parse_json_text(std::string(bytes.begin(), bytes.end()), path.string()));
}

}  // namespace dca
