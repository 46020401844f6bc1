#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dca/attention.hpp"
#include "dca/autograd.hpp"
#include "dca/ops.hpp"
#include "dca/optim.hpp"
#include "dca/parameter.hpp"
#include "dca/random.hpp"

namespace dca {

struct BackboneBlock {
  std::size_t out_channels = 8;
  std::size_t stride = 2;
  bool operator==(const BackboneBlock&) const = default;
};

/// Small convolutional stand-in for a pretrained feature extractor.
struct BackboneConfig {
  std::size_t input_size = 64;
  std::vector<BackboneBlock> blocks{{8, 2}, {16, 2}, {32, 2}};
  std::size_t kernel = 3;

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& b : blocks) s *= b.stride;
    return s;
  }
  std::size_t feature_side() const { return input_size / total_stride(); }
  std::size_t feature_channels() const { return blocks.back().out_channels; }

  void validate() const {
    if (blocks.empty()) throw std::invalid_argument("BackboneConfig: at least one block required");
    if (kernel < 1) throw std::invalid_argument("BackboneConfig: kernel must be >= 1");
    for (const auto& b : blocks)
      if (b.out_channels < 1 || b.stride < 1)
        throw std::invalid_argument("BackboneConfig: block channels and stride must be >= 1");
    if (input_size < 1 || input_size % total_stride() != 0)
      throw std::invalid_argument("BackboneConfig: input_size " + std::to_string(input_size) +
                                  " is not divisible by the total stride " + std::to_string(total_stride()));
  }
};

struct HeadConfig {
  std::size_t hidden_units = 64;
  double dropout_rate = 0.3;
  std::size_t num_classes = 2;
  bool unit_norm = true;

  void validate() const {
    if (hidden_units < 1) throw std::invalid_argument("HeadConfig: hidden_units must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw std::invalid_argument("HeadConfig: dropout_rate must lie in [0,1)");
    if (num_classes < 2) throw std::invalid_argument("HeadConfig: num_classes must be >= 2");
  }
};

struct ModelConfig {
  BackboneConfig backbone;
  DcaConfig dca;
  HeadConfig head;

  /// Validates all parts; the attention width always follows the backbone output.
  void validate() {
    backbone.validate();
    dca.channels = backbone.feature_channels();
    dca.validate();
    head.validate();
  }
};

struct HeadOutput {
  Tensor logits;
  Tensor probabilities;
};

struct ForwardResult {
  Tensor features;
  AttentionMaps maps;
  Tensor logits;
  Tensor probabilities;
};

/**
 * Backbone stand-in -> attention block -> regularized classification head.
 *
 * The head is GAP -> dense -> relu -> dropout -> dense -> softmax. When
 * unit_norm is on, the columns of both dense weight matrices are kept at
 * unit L2 norm (at initialization and after every optimizer step).
 */
class DcaModel {
 public:
  struct ConvLayer {
    Parameter kernel;
    Parameter bias;
    std::size_t stride = 1;
  };

  DcaModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    std::size_t in_ch = 3;
    const std::size_t k = config_.backbone.kernel;
    for (std::size_t i = 0; i < config_.backbone.blocks.size(); ++i) {
      const auto& block = config_.backbone.blocks[i];
      // He-uniform keeps activations alive through the relu stack.
      const double bound = std::sqrt(6.0 / static_cast<double>(k * k * in_ch));
      Tensor w = Tensor::zeros({k, k, in_ch, block.out_channels});
      for (double& v : w.mutable_values()) v = rng.uniform(-bound, bound);
      const std::string name = "backbone." + std::to_string(i);
      backbone_.push_back({Parameter(name + ".kernel", w),
                           Parameter(name + ".bias", Tensor::zeros({block.out_channels})), block.stride});
      in_ch = block.out_channels;
    }
    dca_ = DcaParams::init(config_.dca, rng);

    const std::size_t d = config_.dca.channels, hidden = config_.head.hidden_units, classes = config_.head.num_classes;
    auto dense_init = [&](const std::string& name, std::size_t din, std::size_t dout) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(din));
      Tensor w = Tensor::zeros({din, dout});
      for (double& v : w.mutable_values()) v = rng.uniform(-bound, bound);
      return Parameter(name, w);
    };
    w1_ = dense_init("head.w1", d, hidden);
    b1_ = Parameter("head.b1", Tensor::zeros({hidden}));
    w2_ = dense_init("head.w2", hidden, classes);
    b2_ = Parameter("head.b2", Tensor::zeros({classes}));
    if (config_.head.unit_norm) project_unit_norm();
  }

  const ModelConfig& config() const noexcept { return config_; }

  /// All trainable parameters in declaration order (backbone, attention, head).
  ParameterRefs parameters() {
    ParameterRefs out;
    for (auto& layer : backbone_) {
      out.push_back(&layer.kernel);
      out.push_back(&layer.bias);
    }
    for (Parameter* p : dca_.parameters()) out.push_back(p);
    for (Parameter* p : {&w1_, &b1_, &w2_, &b2_}) out.push_back(p);
    return out;
  }

  std::vector<ConvLayer>& backbone_layers() noexcept { return backbone_; }
  DcaParams& attention_params() noexcept { return dca_; }
  Parameter& w1() noexcept { return w1_; }
  Parameter& b1() noexcept { return b1_; }
  Parameter& w2() noexcept { return w2_; }
  Parameter& b2() noexcept { return b2_; }

  void project_unit_norm() {
    unit_norm_project(w1_.tensor);
    unit_norm_project(w2_.tensor);
  }

  /// [N,S,S,3] images in [0,1] -> [N,h,w,D] feature map.
  Tensor backbone_forward(Tape& tape, const Tensor& images) const {
    expect_rank(images, 4, "backbone_forward");
    const std::size_t s = config_.backbone.input_size;
    if (images.dim(1) != images.dim(2))
      throw ShapeError("backbone_forward: image axis 1 (height " + std::to_string(images.dim(1)) +
                       ") differs from axis 2 (width " + std::to_string(images.dim(2)) + ")");
    if (images.dim(1) != s)
      throw ShapeError("backbone_forward: image axis 1 is " + std::to_string(images.dim(1)) + " but input_size is " +
                       std::to_string(s));
    if (images.dim(3) != 3)
      throw ShapeError("backbone_forward: image axis 3 (channels) is " + std::to_string(images.dim(3)) + ", expected 3");
    for (double v : images.values())
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("backbone_forward: pixel values must lie in [0,1]");

    Tensor x = images;
    for (const auto& layer : backbone_)
      x = relu(tape, conv2d(tape, x, layer.kernel.tensor, layer.bias.tensor, layer.stride, Padding::same));
    return x;
  }

  HeadOutput head_forward(Tape& tape, const Tensor& f_dca, bool training, Rng& rng) const {
    expect_rank(f_dca, 4, "head_forward");
    Tensor pooled = global_average_pool(tape, f_dca);
    Tensor hidden = relu(tape, dense(tape, pooled, w1_.tensor, b1_.tensor));
    Tensor dropped = dropout(tape, hidden, config_.head.dropout_rate, training, rng);
    Tensor logits = dense(tape, dropped, w2_.tensor, b2_.tensor);
    return {logits, softmax_rows(tape, logits)};
  }

  ForwardResult forward(Tape& tape, const Tensor& images, bool training, Rng& rng) const {
    Tensor features = backbone_forward(tape, images);
    AttentionMaps maps = dca_forward(tape, features, config_.dca, dca_);
    HeadOutput head = head_forward(tape, maps.f_dca, training, rng);
    return {features, std::move(maps), head.logits, head.probabilities};
  }

  /// Inference-mode forward without recording gradients.
  ForwardResult infer(const Tensor& images) const {
    Tape tape;
    Rng unused(0);
    return forward(tape, images, false, unused);
  }

 private:
  ModelConfig config_;
  std::vector<ConvLayer> backbone_;
  DcaParams dca_;
  Parameter w1_, b1_, w2_, b2_;
};

}  // namespace dca
