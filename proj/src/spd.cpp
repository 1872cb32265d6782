#include "spgim/spd.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "spgim/caption.hpp"

namespace spgim {

void AsppConfig::validate() const {
  if (dilation_rates.empty()) throw Error("ASPP needs at least one dilation rate");
  std::set<int> seen;
  for (int r : dilation_rates) {
    if (r < 1) throw Error("ASPP dilation rates must be >= 1");
    if (!seen.insert(r).second) throw Error("ASPP dilation rates must be distinct");
  }
  if (branch_channels < 1) throw Error("ASPP branch channels must be positive");
}

void SpdConfig::validate() const {
  backbone.validate();
  aspp.validate();
  if (backbone.output_stride != 16) throw Error("SPD backbone runs at output stride 16");
  if (backbone.in_channels != 3) throw Error("SPD backbone takes RGB input");
  if (mask_downsample < 1 || 16 % mask_downsample != 0)
    throw Error("SPD mask downsample must be one of 1, 2, 4, 8, 16");
}

SpdConfig SpdConfig::desk() {
  SpdConfig c;
  c.backbone.width_multiplier = 0.25;
  c.aspp.branch_channels = c.backbone.scaled(256);
  return c;
}

Aspp::Aspp(ParamStore& store, const std::string& name, int in, const AsppConfig& cfg, Rng& rng) {
  const int bc = cfg.branch_channels;
  branches.emplace_back(store, name + ".branch1x1", in, bc, 1, 1, ops::ConvSpec{}, rng);
  for (int r : cfg.dilation_rates)
    branches.emplace_back(store, name + ".branch_rate" + std::to_string(r), in, bc, 3, 3, same_padding(3, 3, r, r), rng);
  pooled = cfg.global_pool_branch;
  if (pooled) pool_projection = ConvNormAct(store, name + ".image_pool", in, bc, 1, 1, ops::ConvSpec{}, rng);
  const int total = bc * static_cast<int>(branches.size() + (pooled ? 1 : 0));
  fuse = ConvNormAct(store, name + ".fuse", total, bc, 1, 1, ops::ConvSpec{}, rng);
}

Var Aspp::operator()(const Var& x) const {
  std::vector<Var> outs;
  for (const auto& b : branches) outs.push_back(b(x));
  if (pooled) outs.push_back(ops::resize_bilinear(pool_projection(ops::global_avg_pool(x)), x.dim(2), x.dim(3)));
  return fuse(ops::concat_channels(outs));
}

SpdNetwork::SpdNetwork(const SpdConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  backbone_ = VisualBackbone(params_, "backbone", cfg_.backbone, rng);
  const int c4 = cfg_.backbone.stage_channels()[3];
  aspp_ = Aspp(params_, "aspp", c4, cfg_.aspp, rng);
  const int bc = cfg_.aspp.branch_channels;
  int steps = 0;
  for (int f = 16; f > cfg_.mask_downsample; f /= 2) ++steps;
  // Two conv blocks; the first `steps` of them upsample 2x beforehand.
  for (int i = 0; i < 2; ++i) {
    decoder_.emplace_back(params_, "decoder.block" + std::to_string(i), bc, bc, 3, 3, same_padding(3, 3), rng);
    upsample_before_.push_back(i < steps);
  }
  head_ = Conv2d(params_, "decoder.head", bc, 1, 1, 1, ops::ConvSpec{}, rng);
  initialized_ = true;
}

SpdOutput SpdNetwork::forward(const Var& images) const {
  if (!initialized_) throw Error("SPD network is not initialized");
  if (images.value().rank() != 4 || images.dim(1) != 3) throw Error("SPD expects [N,3,H,W] images");
  require_divisible(images.dim(2), images.dim(3), 32, "spd_forward");
  auto stages = backbone_.forward(images);
  Var h = aspp_(stages[3]);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    if (upsample_before_[i]) h = ops::resize_bilinear(h, h.dim(2) * 2, h.dim(3) * 2);
    h = decoder_[i](h);
  }
  Var logits = head_(h);
  const int oh = images.dim(2) / cfg_.mask_downsample;
  const int ow = images.dim(3) / cfg_.mask_downsample;
  logits = ops::resize_bilinear(logits, oh, ow);
  SpdOutput out;
  out.mask = ops::sigmoid(logits);
  out.pyramid.stages = {stages[1], stages[2], stages[3]};
  return out;
}

std::size_t SpdNetwork::load_backbone(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::vector<std::pair<std::string, Tensor>> selected;
  for (const auto& [name, t] : tensors)
    if (name.rfind("backbone.", 0) == 0) selected.emplace_back(name, t);
  return params_.load_matching(selected);
}

Var spd_loss(const Var& mask, const Var& target) {
  if (mask.shape() != target.shape())
    throw Error("spd_loss: mask " + shape_str(mask.shape()) + " vs target " + shape_str(target.shape()));
  return ops::rmse(mask, target);
}

}  // namespace spgim
