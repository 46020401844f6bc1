#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dca/data.hpp"
#include "dca/image.hpp"
#include "dca/metrics.hpp"
#include "dca/model.hpp"
#include "dca/optim.hpp"

namespace dca {

/// CLAHE on the full-resolution frame, then bilinear resize to the model input.
inline Image preprocess(const Image& img, const ClaheConfig& clahe_config, std::size_t side) {
  if (img.channels != 3) throw std::invalid_argument("preprocess: expected an RGB image");
  return resize_bilinear(clahe(img, clahe_config), side);
}

/// Stacks equally sized RGB images into [N,S,S,3] scaled to [0,1].
inline Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const std::size_t w = images[0]->width, h = images[0]->height;
  std::vector<double> values;
  values.reserve(images.size() * w * h * 3);
  for (const Image* img : images) {
    if (img->width != w || img->height != h || img->channels != 3)
      throw std::invalid_argument("to_tensor: images must share one RGB size");
    for (std::uint8_t p : img->pixels) values.push_back(p / 255.0);
  }
  return Tensor({images.size(), h, w, 3}, std::move(values));
}

/// Preprocessed images with labels, indexed by position.
struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  AdamWConfig optimizer;
};

/// Called after every epoch with (epoch index, mean training loss).
using EpochHook = std::function<void(std::size_t, double)>;

/// Trains a fresh model on `subset` of `data`. Initialization, shuffling and
/// dropout masks all derive from `seed`.
inline DcaModel train_model(const ModelConfig& config, const TrainConfig& train, const LabeledImages& data,
                            std::vector<std::size_t> subset, std::uint64_t seed, const EpochHook& hook = {}) {
  if (subset.empty()) throw std::invalid_argument("train_model: empty training set");
  if (train.batch_size < 1 || train.epochs < 1) throw std::invalid_argument("train_model: epochs and batch_size must be >= 1");
  Rng rng(seed);
  DcaModel model(config, rng.fork());
  Rng order_rng(rng.fork()), dropout_rng(rng.fork());
  const std::size_t classes = model.config().head.num_classes;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    order_rng.shuffle(subset);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < subset.size(); start += train.batch_size) {
      const std::size_t end = std::min(subset.size(), start + train.batch_size);
      std::vector<const Image*> imgs;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        imgs.push_back(&data.images[subset[i]]);
        labels.push_back(data.labels[subset[i]]);
      }
      Tape tape;
      const auto r = model.forward(tape, to_tensor(imgs), true, dropout_rng);
      const Tensor loss = cross_entropy(tape, r.probabilities, one_hot(labels, classes));
      tape.backward(loss);
      adamw_step(model.parameters(), train.optimizer);
      if (model.config().head.unit_norm) model.project_unit_norm();
      loss_sum += loss.item();
      ++batches;
    }
    if (hook) hook(epoch, loss_sum / static_cast<double>(batches));
  }
  return model;
}

/// Worker count for evaluation from DCA_THREADS; unset or invalid means 1.
inline std::size_t eval_threads_from_env() {
  const char* v = std::getenv("DCA_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n >= 1) ? static_cast<std::size_t>(n) : 1;
}

struct Predictions {
  std::vector<int> labels;
  std::vector<double> abnormal_probability;
};

/// Inference over `subset` in fixed batches. With threads > 1 the batches are
/// spread over workers; each writes only its own slots, so results do not
/// depend on the thread count.
inline Predictions predict(const DcaModel& model, const LabeledImages& data, const std::vector<std::size_t>& subset,
                           std::size_t threads = 1, std::size_t batch_size = 32) {
  Predictions out;
  out.labels.assign(subset.size(), 0);
  out.abnormal_probability.assign(subset.size(), 0.0);
  const std::size_t classes = model.config().head.num_classes;
  const std::size_t batches = (subset.size() + batch_size - 1) / batch_size;
  auto run = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t b = worker; b < batches; b += workers) {
      const std::size_t start = b * batch_size, end = std::min(subset.size(), start + batch_size);
      std::vector<const Image*> imgs;
      for (std::size_t i = start; i < end; ++i) imgs.push_back(&data.images[subset[i]]);
      const Tensor probs = model.infer(to_tensor(imgs)).probabilities;
      for (std::size_t i = start; i < end; ++i) {
        const auto row = probs.values().subspan((i - start) * classes, classes);
        out.labels[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        out.abnormal_probability[i] = row[static_cast<std::size_t>(kAbnormal)];
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, batches));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run, t, threads);
    for (auto& t : pool) t.join();
  }
  return out;
}

inline ConfusionMatrix evaluate(const DcaModel& model, const LabeledImages& data, const std::vector<std::size_t>& subset,
                                std::size_t threads = 1) {
  const Predictions p = predict(model, data, subset, threads);
  std::vector<int> truth;
  for (std::size_t i : subset) truth.push_back(data.labels[i]);
  return confusion(truth, p.labels, model.config().head.num_classes);
}

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
};

/// Called once per fold with the trained model, before it is discarded.
using FoldHook = std::function<void(const FoldResult&, DcaModel&)>;

/// Stratified k-fold: train on k-1 folds, score the held-out fold only.
inline EvalReport cross_validate(const ModelConfig& config, const TrainConfig& train, const LabeledImages& data,
                                 std::size_t k, std::uint64_t seed, std::size_t threads = 1,
                                 const FoldHook& on_fold = {}) {
  const FoldPlan plan = kfold_split(data.labels, k, seed);
  Rng fold_seeds(seed ^ 0x5deece66dULL);
  EvalReport report;
  for (std::size_t f = 0; f < k; ++f) {
    DcaModel model = train_model(config, train, data, plan.train_indices(f), fold_seeds.fork());
    FoldResult r{f, evaluate(model, data, plan.test_indices(f), threads), {}};
    r.metrics = metrics(r.confusion);
    if (on_fold) on_fold(r, model);
    report.folds.push_back(r.metrics);
  }
  return report;
}

/// The three attention variants compared in the ablation: spatial only, gated only, all branches.
struct AblationRow {
  const char* name;
  bool spatial, gated, refine;
};

inline constexpr AblationRow kAblationRows[] = {
    {"spatial", true, false, false},
    {"gated", false, true, false},
    {"all", true, true, true},
};

inline ModelConfig with_branches(ModelConfig config, const AblationRow& row) {
  config.dca.enable_spatial = row.spatial;
  config.dca.enable_gated = row.gated;
  config.dca.enable_refine = row.refine;
  return config;
}

inline std::string format_ablation_csv(const std::vector<std::pair<AblationRow, EvalReport>>& rows) {
  std::string out = "spatial,gated,refinement,accuracy,precision,recall,f1,kappa\n";
  for (const auto& [row, report] : rows) {
    out += std::string(row.spatial ? "1" : "0") + "," + (row.gated ? "1" : "0") + "," + (row.refine ? "1" : "0");
    for (auto field : kReportFields) out += "," + format_mean_std(report.summary(field));
    out += "\n";
  }
  return out;
}

}  // namespace dca
