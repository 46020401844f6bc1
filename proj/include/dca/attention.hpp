#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "dca/autograd.hpp"
#include "dca/ops.hpp"
#include "dca/parameter.hpp"
#include "dca/random.hpp"

// Dynamic contextual attention over a backbone feature map F [N,H,W,D]:
//
//   F_s   = softmax_HW(relu(conv_k(F)))      spatial branch
//   F_g   = sigmoid(conv_1x1(F))             gating branch
//   F_c   = F_s * F_g
//   F_a   = sigmoid(conv_k(F))               refinement branch
//   F_r   = F_c + F_a
//   F_dca = F_r * F
//
// Every branch emits D channels so all products and sums are shape-exact.

namespace dca {

struct DcaConfig {
  std::size_t channels = 32;
  std::size_t spatial_kernel = 3;
  std::size_t refine_kernel = 3;
  bool enable_spatial = true;
  bool enable_gated = true;
  bool enable_refine = true;

  /// Throws std::invalid_argument on an unusable combination.
  void validate() const {
    if (channels < 1) throw std::invalid_argument("DcaConfig: channels must be >= 1");
    if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
      throw std::invalid_argument("DcaConfig: spatial_kernel must be odd and >= 1");
    if (refine_kernel < 1 || refine_kernel % 2 == 0)
      throw std::invalid_argument("DcaConfig: refine_kernel must be odd and >= 1");
    // Refinement adds to F_c, so it cannot stand alone.
    if (!enable_spatial && !enable_gated)
      throw std::invalid_argument("DcaConfig: at least one of spatial/gated must be enabled");
  }
};

/// Kernel [k,k,D,D] and bias [D] of one attention branch.
struct ConvBranch {
  Parameter kernel;
  Parameter bias;

  static ConvBranch init(const std::string& name, std::size_t k, std::size_t channels, Rng& rng) {
    // Uniform in +-1/sqrt(fan_in); zero bias.
    const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * channels));
    Tensor w = Tensor::zeros({k, k, channels, channels});
    for (double& v : w.mutable_values()) v = rng.uniform(-bound, bound);
    return {Parameter(name + ".kernel", w), Parameter(name + ".bias", Tensor::zeros({channels}))};
  }
};

struct DcaParams {
  std::optional<ConvBranch> spatial;
  std::optional<ConvBranch> gated;
  std::optional<ConvBranch> refine;

  /// Allocates parameters for the enabled branches only.
  static DcaParams init(const DcaConfig& config, Rng& rng) {
    config.validate();
    DcaParams p;
    if (config.enable_spatial) p.spatial = ConvBranch::init("dca.spatial", config.spatial_kernel, config.channels, rng);
    if (config.enable_gated) p.gated = ConvBranch::init("dca.gated", 1, config.channels, rng);
    if (config.enable_refine) p.refine = ConvBranch::init("dca.refine", config.refine_kernel, config.channels, rng);
    return p;
  }

  ParameterRefs parameters() {
    ParameterRefs out;
    for (auto* b : {&spatial, &gated, &refine})
      if (*b) {
        out.push_back(&(*b)->kernel);
        out.push_back(&(*b)->bias);
      }
    return out;
  }
};

/// Intermediate maps kept for explanation; disabled branches stay empty.
struct AttentionMaps {
  std::optional<Tensor> f_s;
  std::optional<Tensor> f_g;
  Tensor f_c;
  std::optional<Tensor> f_a;
  Tensor f_r;
  Tensor f_dca;
};

namespace detail {

inline void check_branch(const Tensor& f, const ConvBranch& p, const char* what) {
  expect_rank(f, 4, what);
  const Tensor& k = p.kernel.tensor;
  if (k.dim(2) != f.dim(3) || k.dim(3) != f.dim(3))
    throw ShapeError(std::string(what) + ": feature map axis 3 (channels) is " + std::to_string(f.dim(3)) +
                     " but branch kernel maps " + std::to_string(k.dim(2)) + " -> " + std::to_string(k.dim(3)));
}

}  // namespace detail

/// softmax over H*W of relu(conv(F)); every (n,c) slice sums to 1.
inline Tensor spatial_branch(Tape& tape, const Tensor& f, const ConvBranch& p) {
  detail::check_branch(f, p, "spatial_branch");
  return spatial_softmax(tape, relu(tape, conv2d(tape, f, p.kernel.tensor, p.bias.tensor, 1, Padding::same)));
}

/// sigmoid of a 1x1 convolution.
inline Tensor gating_branch(Tape& tape, const Tensor& f, const ConvBranch& p) {
  detail::check_branch(f, p, "gating_branch");
  if (p.kernel.tensor.dim(0) != 1) throw ShapeError("gating_branch: kernel axis 0 must be 1 (1x1 convolution)");
  return sigmoid(tape, conv2d(tape, f, p.kernel.tensor, p.bias.tensor, 1, Padding::same));
}

/// sigmoid of a k x k convolution; the additive correction to F_c.
inline Tensor refine_branch(Tape& tape, const Tensor& f, const ConvBranch& p) {
  detail::check_branch(f, p, "refine_branch");
  return sigmoid(tape, conv2d(tape, f, p.kernel.tensor, p.bias.tensor, 1, Padding::same));
}

/**
 * Applies the attention block and returns every intermediate map.
 *
 * With a single one of spatial/gated enabled, F_c is that branch's map.
 * Without refinement, F_r = F_c. Branch parameters present in `params` but
 * disabled in `config` are never read.
 */
inline AttentionMaps dca_forward(Tape& tape, const Tensor& f, const DcaConfig& config, const DcaParams& params) {
  config.validate();
  expect_rank(f, 4, "dca_forward");
  if (f.dim(3) != config.channels)
    throw ShapeError("dca_forward: feature map axis 3 (channels) is " + std::to_string(f.dim(3)) +
                     " but config expects " + std::to_string(config.channels));
  auto need = [](const std::optional<ConvBranch>& b, const char* name) -> const ConvBranch& {
    if (!b) throw std::invalid_argument(std::string("dca_forward: ") + name + " branch enabled but has no parameters");
    return *b;
  };

  AttentionMaps maps;
  if (config.enable_spatial) maps.f_s = spatial_branch(tape, f, need(params.spatial, "spatial"));
  if (config.enable_gated) maps.f_g = gating_branch(tape, f, need(params.gated, "gated"));

  if (maps.f_s && maps.f_g)
    maps.f_c = mul(tape, *maps.f_s, *maps.f_g);
  else
    maps.f_c = maps.f_s ? *maps.f_s : *maps.f_g;

  if (config.enable_refine) {
    maps.f_a = refine_branch(tape, f, need(params.refine, "refine"));
    maps.f_r = add(tape, maps.f_c, *maps.f_a);
  } else {
    maps.f_r = maps.f_c;
  }
  maps.f_dca = mul(tape, maps.f_r, f);
  return maps;
}

}  // namespace dca
