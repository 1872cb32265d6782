#include "spgim/backbone.hpp"

#include <cmath>

namespace spgim {

int VisualBackboneConfig::scaled(int full_channels) const {
  const int c = static_cast<int>(std::lround(full_channels * width_multiplier / 4.0)) * 4;
  return std::max(4, c);
}

std::array<int, 4> VisualBackboneConfig::stage_channels() const {
  return {scaled(256), scaled(512), scaled(1024), scaled(2048)};
}

std::array<int, 4> VisualBackboneConfig::strides() const {
  return output_stride == 16 ? std::array<int, 4>{4, 8, 16, 16} : std::array<int, 4>{4, 8, 16, 32};
}

void VisualBackboneConfig::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) throw Error("backbone width multiplier must be in (0,1]");
  if (output_stride != 16 && output_stride != 32) throw Error("backbone output stride must be 16 or 32");
  if (in_channels < 1) throw Error("backbone needs at least one input channel");
  for (int b : blocks)
    if (b < 1) throw Error("every backbone stage needs at least one block");
}

Bottleneck::Bottleneck(ParamStore& store, const std::string& name, int in, int mid, int out, int stride, int dilation,
                       Rng& rng)
    : reduce(store, name + ".reduce", in, mid, 1, 1, {}, rng),
      spatial(store, name + ".spatial", mid, mid, 3, 3, same_padding(3, 3, dilation, dilation, stride), rng),
      expand(store, name + ".expand", mid, out, 1, 1, {}, rng, false, true) {
  if (in != out || stride != 1) {
    has_projection = true;
    ops::ConvSpec s;
    s.stride = stride;
    projection = ConvNormAct(store, name + ".projection", in, out, 1, 1, s, rng, false);
  }
}

Var Bottleneck::operator()(const Var& x) const {
  Var y = expand(spatial(reduce(x)));
  Var shortcut = has_projection ? projection(x) : x;
  return ops::relu(ops::add(y, shortcut));
}

VisualBackbone::VisualBackbone(ParamStore& store, const std::string& prefix, const VisualBackboneConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  stem_ = ConvNormAct(store, prefix + ".stem", cfg.in_channels, cfg.stem_channels(), 7, 7, same_padding(7, 7, 1, 1, 2),
                      rng);
  const auto out_ch = cfg.stage_channels();
  int in = cfg.stem_channels();
  for (int s = 0; s < 4; ++s) {
    int stride = s == 0 ? 1 : 2;
    int dilation = 1;
    if (s == 3 && cfg.output_stride == 16) {
      stride = 1;
      dilation = 2;
    }
    const int mid = std::max(4, out_ch[s] / 4);
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const std::string name = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      // Only the first block changes resolution; dilation applies to the whole stage.
      stages_[s].emplace_back(store, name, in, mid, out_ch[s], b == 0 ? stride : 1, dilation, rng);
      in = out_ch[s];
    }
  }
}

std::array<Var, 4> VisualBackbone::forward(const Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != cfg_.in_channels)
    throw Error("backbone: expected [N," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                shape_str(x.shape()));
  Var h = ops::max_pool2d(stem_(x), 3, 2, 1);
  std::array<Var, 4> out;
  for (int s = 0; s < 4; ++s) {
    for (const Bottleneck& b : stages_[s]) h = b(h);
    out[s] = h;
  }
  return out;
}

}  // namespace spgim
