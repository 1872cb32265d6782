#pragma once

#include <array>
#include <string>
#include <vector>

#include "spgim/backbone.hpp"
#include "spgim/image.hpp"
#include "spgim/spd.hpp"

namespace spgim {

// ---------------------------------------------------------------------------
// Textual semantic transformation: non-local retrieval of guidance features.

/// Core retrieval on already-projected maps. For every matting location the
/// attention row is softmax over guidance locations of k_matt . k_guid; the
/// retrieved value is that row applied to v_guid. Output is v_matt (+) retrieved
/// along channels. `attention` (optional) receives one [N_matt, N_guid] matrix
/// per sample.
Var tst_attend(const Var& key_matt, const Var& key_guid, const Var& value_matt, const Var& value_guid,
               std::vector<Tensor>* attention = nullptr);

struct TstBlock {
  TstBlock() = default;
  TstBlock(ParamStore& store, const std::string& name, int guid_channels, int matt_channels, int key_dim,
           int value_dim, Rng& rng);

  /// Both inputs must come from the same stride (equal spatial grids).
  Var operator()(const Var& guidance, const Var& matting, std::vector<Tensor>* attention = nullptr) const;
  int out_channels() const { return 2 * value_dim; }

  Conv2d key_guid, value_guid, key_matt, value_matt;
  int key_dim = 0;
  int value_dim = 0;
};

// ---------------------------------------------------------------------------
// Adaptive focal transformation

/// u = 1 where eps < a < 1 - eps, else 0.
AlphaMatte focal_mask(const AlphaMatte& a_prev, double eps = 1e-3);
Tensor focal_mask(const Tensor& a_prev, double eps = 1e-3);

/// Vertical (k x 1) followed by horizontal (1 x k) convolution.
Var separable_conv(const Var& x, const Conv2d& vertical, const Conv2d& horizontal);

struct AftOutput {
  Var alpha;           // a_i in [0,1] at the feature resolution
  Var feature;         // fused hidden feature handed to the next level
  Var boundary_input;  // (a_prev * u) upsampled, for inspection
};

struct AftLevel {
  AftLevel() = default;
  AftLevel(ParamStore& store, const std::string& name, int feature_channels, int hidden, Rng& rng,
           double focal_eps = 1e-3);

  AftOutput operator()(const Var& a_prev, const Var& feature) const;

  // body path: two dilated separable stages (5x1 then 1x5, dilation 2)
  Conv2d body_v1, body_h1, body_v2, body_h2;
  GroupNorm body_norm1, body_norm2;
  // boundary path: two 3x3 convolutions
  ConvNormAct boundary1, boundary2;
  ConvNormAct fuse;
  Conv2d head;
  double focal_eps = 1e-3;
};

/// Single-path decoder level used when focal refinement is ablated.
struct PlainLevel {
  PlainLevel() = default;
  PlainLevel(ParamStore& store, const std::string& name, int feature_channels, int hidden, Rng& rng);
  AftOutput operator()(const Var& a_prev, const Var& feature) const;

  ConvNormAct conv1, conv2;
  Conv2d head;
};

// ---------------------------------------------------------------------------
// matting network

enum class SpgmVariant {
  kFull,   // TST fusion + focal refinement
  kNoTst,  // no guidance: stage features projected instead of fused
  kNoAft,  // fused features, plain decoder levels
};
std::string to_string(SpgmVariant v);
SpgmVariant parse_variant(const std::string& s);

struct SpgmConfig {
  VisualBackboneConfig backbone{1.0, {3, 4, 6, 3}, 4, 16};
  /// Channel widths of the guidance stages 2..4 (the SPD backbone's).
  std::array<int, 3> guidance_channels{512, 1024, 2048};
  int key_divisor = 8;
  int value_divisor = 4;
  std::array<int, 3> level_strides{8, 4, 1};
  std::vector<double> loss_weights{1.0, 2.0, 3.0};
  double focal_eps = 1e-3;
  SpgmVariant variant = SpgmVariant::kFull;

  void validate() const;
  /// Matches an SPD configuration (same width and output stride).
  static SpgmConfig for_spd(const SpdConfig& spd);
};

struct MattingOutput {
  Var seed;                 // a_0 at stride 16
  std::vector<Var> alphas;  // a_1..a_L, coarse to fine; a_L at input resolution
  std::vector<Var> boundary_inputs;
};

struct SpgmTrace {
  /// attention[stage][sample] for stages 2, 3, 4
  std::array<std::vector<Tensor>, 3> attention;
};

class SpgmNetwork {
 public:
  SpgmNetwork() = default;
  SpgmNetwork(const SpgmConfig& cfg, std::uint64_t seed);

  const SpgmConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  bool initialized() const { return initialized_; }

  /// images [N,3,H,W]; mask [N,1,H,W] (already upsampled to input size);
  /// guidance from the SPD pass on the same images. A null or empty guidance
  /// is accepted only by the kNoTst variant.
  MattingOutput forward(const Var& images, const Var& mask, const FeaturePyramid* guidance,
                        SpgmTrace* trace = nullptr) const;

 private:
  bool initialized_ = false;
  SpgmConfig cfg_;
  ParamStore params_;
  VisualBackbone encoder_;
  std::array<TstBlock, 3> tst_;
  std::array<ConvNormAct, 3> stage_projection_;  // kNoTst replacement for TST
  ConvNormAct deep_fuse_;
  Conv2d seed_head_;
  ConvNormAct shallow_;
  std::array<ConvNormAct, 3> level_input_;
  std::array<AftLevel, 3> aft_;
  std::array<PlainLevel, 3> plain_;
};

/// Ground-truth pyramid by area downsampling to each output's resolution.
std::vector<Var> alpha_pyramid(const Var& alpha_gt, const MattingOutput& out);

/// sum_i lambda_i * mean|a_i - a*_i|
Var spgm_loss(const MattingOutput& out, const Var& alpha_gt, const std::vector<double>& weights);
Var spgm_loss(const std::vector<Var>& alphas, const std::vector<Var>& targets, const std::vector<double>& weights);

}  // namespace spgim
