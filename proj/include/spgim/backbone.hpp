#pragma once

#include <array>
#include <string>
#include <vector>

#include "spgim/nn.hpp"

namespace spgim {

/// Four-stage bottleneck residual encoder (50-layer layout at default depth).
struct VisualBackboneConfig {
  double width_multiplier = 1.0;
  std::array<int, 4> blocks{3, 4, 6, 3};
  int in_channels = 3;
  /// 32: every stage downsamples. 16: the last stage keeps stride 16 and
  /// dilates its 3x3 convolutions instead (same weights, denser output).
  int output_stride = 32;

  int scaled(int full_channels) const;
  int stem_channels() const { return scaled(64); }
  /// Output channels per stage; {256, 512, 1024, 2048} at full width.
  std::array<int, 4> stage_channels() const;
  /// Cumulative stride per stage; {4, 8, 16, 32} or {4, 8, 16, 16}.
  std::array<int, 4> strides() const;
  void validate() const;
};

struct Bottleneck {
  Bottleneck() = default;
  Bottleneck(ParamStore& store, const std::string& name, int in, int mid, int out, int stride, int dilation, Rng& rng);
  Var operator()(const Var& x) const;

  ConvNormAct reduce, spatial, expand;
  bool has_projection = false;
  ConvNormAct projection;
};

class VisualBackbone {
 public:
  VisualBackbone() = default;
  VisualBackbone(ParamStore& store, const std::string& prefix, const VisualBackboneConfig& cfg, Rng& rng);

  /// Stage outputs c1..c4 for x[N, in_channels, H, W].
  std::array<Var, 4> forward(const Var& x) const;
  const VisualBackboneConfig& config() const { return cfg_; }

 private:
  VisualBackboneConfig cfg_;
  ConvNormAct stem_;
  std::array<std::vector<Bottleneck>, 4> stages_;
};

}  // namespace spgim
