#include "spgim/spgm.hpp"

#include <algorithm>

#include "spgim/caption.hpp"

namespace spgim {

Var tst_attend(const Var& key_matt, const Var& key_guid, const Var& value_matt, const Var& value_guid,
               std::vector<Tensor>* attention) {
  if (key_matt.value().rank() != 4 || key_guid.value().rank() != 4 || value_matt.value().rank() != 4 ||
      value_guid.value().rank() != 4)
    throw Error("tst: expected NCHW maps");
  const int n = key_matt.dim(0);
  const int h = key_matt.dim(2), w = key_matt.dim(3);
  if (key_guid.dim(2) != h || key_guid.dim(3) != w || value_guid.dim(2) != h || value_guid.dim(3) != w ||
      value_matt.dim(2) != h || value_matt.dim(3) != w)
    throw Error("tst: stride mismatch, matting grid " + std::to_string(h) + "x" + std::to_string(w) +
                " vs guidance grid " + std::to_string(key_guid.dim(2)) + "x" + std::to_string(key_guid.dim(3)));
  if (key_guid.dim(0) != n || value_guid.dim(0) != n || value_matt.dim(0) != n)
    throw Error("tst: batch size mismatch");
  if (key_guid.dim(1) != key_matt.dim(1)) throw Error("tst: key dimensions differ between streams");

  std::vector<Var> retrieved;
  retrieved.reserve(n);
  if (attention) attention->clear();
  for (int s = 0; s < n; ++s) {
    Var f = ops::softmax_rows(ops::matmul_nt(ops::to_tokens(key_matt, s), ops::to_tokens(key_guid, s)));
    if (attention) attention->push_back(f.value());
    retrieved.push_back(ops::from_tokens(ops::matmul(f, ops::to_tokens(value_guid, s)), h, w));
  }
  return ops::concat_channels({value_matt, n == 1 ? retrieved[0] : ops::concat_batch(retrieved)});
}

TstBlock::TstBlock(ParamStore& store, const std::string& name, int guid_channels, int matt_channels, int key_dim_,
                   int value_dim_, Rng& rng)
    : key_dim(key_dim_), value_dim(value_dim_) {
  if (key_dim < 1 || value_dim < 1) throw Error("tst: key and value dims must be positive");
  key_guid = Conv2d(store, name + ".key_guid", guid_channels, key_dim, 1, 1, ops::ConvSpec{}, rng);
  value_guid = Conv2d(store, name + ".value_guid", guid_channels, value_dim, 1, 1, ops::ConvSpec{}, rng);
  key_matt = Conv2d(store, name + ".key_matt", matt_channels, key_dim, 1, 1, ops::ConvSpec{}, rng);
  value_matt = Conv2d(store, name + ".value_matt", matt_channels, value_dim, 1, 1, ops::ConvSpec{}, rng);
}

Var TstBlock::operator()(const Var& guidance, const Var& matting, std::vector<Tensor>* attention) const {
  if (guidance.dim(2) != matting.dim(2) || guidance.dim(3) != matting.dim(3))
    throw Error("tst: stride mismatch, guidance " + shape_str(guidance.shape()) + " vs matting " +
                shape_str(matting.shape()));
  return tst_attend(key_matt(matting), key_guid(guidance), value_matt(matting), value_guid(guidance), attention);
}

AlphaMatte focal_mask(const AlphaMatte& a_prev, double eps) {
  AlphaMatte u(a_prev.height(), a_prev.width());
  const double* a = a_prev.data().data();
  double* out = u.data().data();
  const std::size_t n = static_cast<std::size_t>(a_prev.height()) * a_prev.width();
  for (std::size_t i = 0; i < n; ++i) out[i] = (a[i] > eps && a[i] < 1.0 - eps) ? 1.0 : 0.0;
  return u;
}

Tensor focal_mask(const Tensor& a_prev, double eps) {
  Tensor u(a_prev.shape());
  const auto a = a_prev.values();
  for (std::size_t i = 0; i < a.size(); ++i) u[i] = (a[i] > eps && a[i] < 1.0 - eps) ? 1.0 : 0.0;
  return u;
}

Var separable_conv(const Var& x, const Conv2d& vertical, const Conv2d& horizontal) {
  return horizontal(vertical(x));
}

namespace {

Var upsample_to(const Var& x, const Var& like) { return ops::resize_bilinear(x, like.dim(2), like.dim(3)); }

void check_level_inputs(const Var& a_prev, const Var& feature) {
  if (a_prev.value().rank() != 4 || a_prev.dim(1) != 1) throw Error("aft: previous alpha must be [N,1,h,w]");
  if (feature.value().rank() != 4 || feature.dim(0) != a_prev.dim(0)) throw Error("aft: feature batch mismatch");
  if (feature.dim(2) < a_prev.dim(2) || feature.dim(3) < a_prev.dim(3))
    throw Error("aft: resolution mismatch, alpha " + shape_str(a_prev.shape()) + " is finer than feature " +
                shape_str(feature.shape()));
}

}  // namespace

AftLevel::AftLevel(ParamStore& store, const std::string& name, int feature_channels, int hidden, Rng& rng,
                   double eps)
    : focal_eps(eps) {
  const int in = feature_channels + 1;
  body_v1 = Conv2d(store, name + ".body.sep1_v", in, hidden, 5, 1, same_padding(5, 1, 2, 1), rng, false);
  body_h1 = Conv2d(store, name + ".body.sep1_h", hidden, hidden, 1, 5, same_padding(1, 5, 1, 2), rng, false);
  body_norm1 = GroupNorm(store, name + ".body.gn1", hidden);
  body_v2 = Conv2d(store, name + ".body.sep2_v", hidden, hidden, 5, 1, same_padding(5, 1, 2, 1), rng, false);
  body_h2 = Conv2d(store, name + ".body.sep2_h", hidden, hidden, 1, 5, same_padding(1, 5, 1, 2), rng, false);
  body_norm2 = GroupNorm(store, name + ".body.gn2", hidden);
  boundary1 = ConvNormAct(store, name + ".boundary.conv1", in, hidden, 3, 3, same_padding(3, 3), rng);
  boundary2 = ConvNormAct(store, name + ".boundary.conv2", hidden, hidden, 3, 3, same_padding(3, 3), rng);
  fuse = ConvNormAct(store, name + ".fuse", 2 * hidden, hidden, 3, 3, same_padding(3, 3), rng);
  head = Conv2d(store, name + ".head", hidden, 1, 1, 1, ops::ConvSpec{}, rng);
}

AftOutput AftLevel::operator()(const Var& a_prev, const Var& feature) const {
  check_level_inputs(a_prev, feature);
  Var u = constant(focal_mask(a_prev.value(), focal_eps));
  Var a_up = upsample_to(a_prev, feature);
  Var focus_up = upsample_to(ops::mul(a_prev, u), feature);

  Var body = ops::concat_channels({a_up, feature});
  body = ops::relu(body_norm1(separable_conv(body, body_v1, body_h1)));
  body = ops::relu(body_norm2(separable_conv(body, body_v2, body_h2)));

  Var edge = boundary2(boundary1(ops::concat_channels({focus_up, feature})));

  AftOutput out;
  out.feature = fuse(ops::concat_channels({body, edge}));
  out.alpha = ops::sigmoid(head(out.feature));
  out.boundary_input = focus_up;
  return out;
}

PlainLevel::PlainLevel(ParamStore& store, const std::string& name, int feature_channels, int hidden, Rng& rng) {
  conv1 = ConvNormAct(store, name + ".conv1", feature_channels + 1, hidden, 3, 3, same_padding(3, 3), rng);
  conv2 = ConvNormAct(store, name + ".conv2", hidden, hidden, 3, 3, same_padding(3, 3), rng);
  head = Conv2d(store, name + ".head", hidden, 1, 1, 1, ops::ConvSpec{}, rng);
}

AftOutput PlainLevel::operator()(const Var& a_prev, const Var& feature) const {
  check_level_inputs(a_prev, feature);
  AftOutput out;
  Var a_up = upsample_to(a_prev, feature);
  out.feature = conv2(conv1(ops::concat_channels({a_up, feature})));
  out.alpha = ops::sigmoid(head(out.feature));
  out.boundary_input = a_up;
  return out;
}

std::string to_string(SpgmVariant v) {
  switch (v) {
    case SpgmVariant::kFull: return "full";
    case SpgmVariant::kNoTst: return "no_tst";
    case SpgmVariant::kNoAft: return "no_aft";
  }
  return "full";
}

SpgmVariant parse_variant(const std::string& s) {
  if (s == "full") return SpgmVariant::kFull;
  if (s == "no_tst") return SpgmVariant::kNoTst;
  if (s == "no_aft") return SpgmVariant::kNoAft;
  throw Error("unknown SPGM variant '" + s + "' (expected full, no_tst or no_aft)");
}

void SpgmConfig::validate() const {
  backbone.validate();
  if (backbone.in_channels != 4) throw Error("SPGM encoder takes RGB + mask (4 channels)");
  if (backbone.output_stride != 16) throw Error("SPGM encoder runs at output stride 16");
  if (key_divisor < 1 || value_divisor < 1) throw Error("SPGM key/value divisors must be positive");
  if (level_strides != std::array<int, 3>{8, 4, 1}) throw Error("SPGM refinement levels are fixed at strides 8, 4, 1");
  if (loss_weights.size() != 3) throw Error("SPGM needs one loss weight per level (3)");
  if (!(focal_eps >= 0.0 && focal_eps < 0.5)) throw Error("focal eps must be in [0, 0.5)");
  for (int c : guidance_channels)
    if (c < 1) throw Error("guidance channel counts must be positive");
}

SpgmConfig SpgmConfig::for_spd(const SpdConfig& spd) {
  SpgmConfig c;
  c.backbone = spd.backbone;
  c.backbone.in_channels = 4;
  const auto ch = spd.backbone.stage_channels();
  c.guidance_channels = {ch[1], ch[2], ch[3]};
  return c;
}

SpgmNetwork::SpgmNetwork(const SpgmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = VisualBackbone(params_, "encoder", cfg_.backbone, rng);
  const auto ch = cfg_.backbone.stage_channels();
  std::array<int, 3> fused{};
  for (int i = 0; i < 3; ++i) {
    const int c = ch[i + 1];
    const int kd = std::max(1, c / cfg_.key_divisor);
    const int vd = std::max(1, c / cfg_.value_divisor);
    fused[i] = 2 * vd;
    const std::string stage = "stage" + std::to_string(i + 2);
    if (cfg_.variant == SpgmVariant::kNoTst)
      stage_projection_[i] = ConvNormAct(params_, "projection." + stage, c, fused[i], 1, 1, ops::ConvSpec{}, rng);
    else
      tst_[i] = TstBlock(params_, "tst." + stage, cfg_.guidance_channels[i], c, kd, vd, rng);
  }
  const int deep = cfg_.backbone.scaled(256);
  const std::array<int, 3> hidden{cfg_.backbone.scaled(256), cfg_.backbone.scaled(128), cfg_.backbone.scaled(64)};
  const int shallow = cfg_.backbone.scaled(32);

  deep_fuse_ = ConvNormAct(params_, "decoder.deep_fuse", fused[2] + fused[1], deep, 3, 3, same_padding(3, 3), rng);
  seed_head_ = Conv2d(params_, "decoder.seed_head", deep, 1, 1, 1, ops::ConvSpec{}, rng);
  shallow_ = ConvNormAct(params_, "decoder.shallow", 4, shallow, 3, 3, same_padding(3, 3), rng);
  const std::array<int, 3> skip{fused[0], ch[0], shallow};
  const std::array<int, 3> below{deep, hidden[0], hidden[1]};
  for (int i = 0; i < 3; ++i) {
    const std::string level = "decoder.level" + std::to_string(i + 1);
    level_input_[i] =
        ConvNormAct(params_, level + ".input", below[i] + skip[i], hidden[i], 3, 3, same_padding(3, 3), rng);
    if (cfg_.variant == SpgmVariant::kNoAft)
      plain_[i] = PlainLevel(params_, level + ".plain", hidden[i], hidden[i], rng);
    else
      aft_[i] = AftLevel(params_, level + ".aft", hidden[i], hidden[i], rng, cfg_.focal_eps);
  }
  initialized_ = true;
}

MattingOutput SpgmNetwork::forward(const Var& images, const Var& mask, const FeaturePyramid* guidance,
                                   SpgmTrace* trace) const {
  if (!initialized_) throw Error("SPGM network is not initialized");
  if (images.value().rank() != 4 || images.dim(1) != 3) throw Error("SPGM expects [N,3,H,W] images");
  if (mask.value().rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != images.dim(0) ||
      mask.dim(2) != images.dim(2) || mask.dim(3) != images.dim(3))
    throw Error("SPGM mask must be [N,1,H,W] at image resolution, got " + shape_str(mask.shape()) + " for images " +
                shape_str(images.shape()));
  require_divisible(images.dim(2), images.dim(3), 32, "spgm_forward");
  const bool unguided = guidance == nullptr || guidance->empty();
  if (unguided && cfg_.variant != SpgmVariant::kNoTst)
    throw Error("SPGM: guidance pyramid missing; unguided runs need the no_tst variant");

  Var x = ops::concat_channels({images, mask});
  auto c = encoder_.forward(x);

  std::array<Var, 3> fused;
  for (int i = 0; i < 3; ++i) {
    if (cfg_.variant == SpgmVariant::kNoTst) {
      fused[i] = stage_projection_[i](c[i + 1]);
    } else {
      const Var& g = guidance->stages[i];
      if (g.dim(1) != cfg_.guidance_channels[i])
        throw Error("SPGM: guidance stage " + std::to_string(i + 2) + " has " + std::to_string(g.dim(1)) +
                    " channels, expected " + std::to_string(cfg_.guidance_channels[i]));
      fused[i] = tst_[i](g, c[i + 1], trace ? &trace->attention[i] : nullptr);
    }
  }

  MattingOutput out;
  Var deep = deep_fuse_(ops::concat_channels({fused[2], upsample_to(fused[1], fused[2])}));
  out.seed = ops::sigmoid(seed_head_(deep));

  const std::array<Var, 3> skips{fused[0], c[0], shallow_(x)};
  Var below = deep;
  Var a_prev = out.seed;
  for (int i = 0; i < 3; ++i) {
    Var feature = level_input_[i](ops::concat_channels({upsample_to(below, skips[i]), skips[i]}));
    AftOutput level = cfg_.variant == SpgmVariant::kNoAft ? plain_[i](a_prev, feature) : aft_[i](a_prev, feature);
    out.alphas.push_back(level.alpha);
    out.boundary_inputs.push_back(level.boundary_input);
    below = level.feature;
    a_prev = level.alpha;
  }
  return out;
}

std::vector<Var> alpha_pyramid(const Var& alpha_gt, const MattingOutput& out) {
  std::vector<Var> targets;
  for (const auto& a : out.alphas) {
    if (alpha_gt.dim(2) % a.dim(2) != 0 || alpha_gt.dim(3) % a.dim(3) != 0 ||
        alpha_gt.dim(2) / a.dim(2) != alpha_gt.dim(3) / a.dim(3))
      throw Error("alpha pyramid: level " + shape_str(a.shape()) + " does not evenly divide " +
                  shape_str(alpha_gt.shape()));
    targets.push_back(ops::area_downsample(alpha_gt, alpha_gt.dim(2) / a.dim(2)));
  }
  return targets;
}

Var spgm_loss(const std::vector<Var>& alphas, const std::vector<Var>& targets, const std::vector<double>& weights) {
  if (weights.size() != alphas.size())
    throw Error("spgm_loss: " + std::to_string(weights.size()) + " weights for " + std::to_string(alphas.size()) +
                " alpha levels");
  if (targets.size() != alphas.size()) throw Error("spgm_loss: target count mismatch");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i].shape() != targets[i].shape())
      throw Error("spgm_loss: level " + std::to_string(i + 1) + " alpha " + shape_str(alphas[i].shape()) +
                  " vs target " + shape_str(targets[i].shape()));
    terms.push_back(ops::l1_mean(alphas[i], targets[i]));
  }
  return ops::add_scalars(terms, weights);
}

Var spgm_loss(const MattingOutput& out, const Var& alpha_gt, const std::vector<double>& weights) {
  if (weights.size() != out.alphas.size())
    throw Error("spgm_loss: " + std::to_string(weights.size()) + " weights for " + std::to_string(out.alphas.size()) +
                " alpha levels");
  return spgm_loss(out.alphas, alpha_pyramid(alpha_gt, out), weights);
}

}  // namespace spgim
