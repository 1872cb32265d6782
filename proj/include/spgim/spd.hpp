#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "spgim/backbone.hpp"
#include "spgim/image.hpp"

namespace spgim {

struct AsppConfig {
  std::vector<int> dilation_rates{6, 12, 18};
  int branch_channels = 256;
  bool global_pool_branch = true;

  void validate() const;
};

struct SpdConfig {
  VisualBackboneConfig backbone{1.0, {3, 4, 6, 3}, 3, 16};
  AsppConfig aspp;
  /// Output mask stride; must equal the saliency-target downsample factor.
  int mask_downsample = 16;

  void validate() const;
  /// Width 0.25 with ASPP branches scaled by the same multiplier.
  static SpdConfig desk();
};

/// Guidance features of stages 2, 3 and 4 (strides 8, 16, 16 at output stride 16).
struct FeaturePyramid {
  std::array<Var, 3> stages;
  bool empty() const { return !stages[0].defined(); }
};

struct SpdOutput {
  Var mask;  // [N, 1, H/d, W/d], sigmoid range
  FeaturePyramid pyramid;
};

struct Aspp {
  Aspp() = default;
  Aspp(ParamStore& store, const std::string& name, int in, const AsppConfig& cfg, Rng& rng);
  Var operator()(const Var& x) const;

  std::vector<ConvNormAct> branches;
  bool pooled = false;
  ConvNormAct pool_projection;
  ConvNormAct fuse;
};

/// Saliency distillation network: residual encoder -> ASPP -> decoder -> sigmoid mask.
class SpdNetwork {
 public:
  SpdNetwork() = default;
  SpdNetwork(const SpdConfig& cfg, std::uint64_t seed);

  bool initialized() const { return initialized_; }
  const SpdConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Var head_bias() const { return head_.bias; }
  Var head_weight() const { return head_.weight; }

  SpdOutput forward(const Var& images) const;

  /// Copies "backbone.*" tensors from a caption checkpoint. Returns the count.
  std::size_t load_backbone(const std::vector<std::pair<std::string, Tensor>>& tensors);

 private:
  bool initialized_ = false;
  SpdConfig cfg_;
  ParamStore params_;
  VisualBackbone backbone_;
  Aspp aspp_;
  std::vector<ConvNormAct> decoder_;
  std::vector<bool> upsample_before_;
  Conv2d head_;
};

/// Per-sample RMSE sqrt(mean((M_s - S(a*))^2)), averaged over the batch.
Var spd_loss(const Var& mask, const Var& target);

}  // namespace spgim
