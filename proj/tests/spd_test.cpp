#include <gtest/gtest.h>

#include "spgim/caption.hpp"
#include "spgim/spd.hpp"
#include "support.hpp"

namespace spgim {
namespace {

using testing::check_gradients;
using testing::random_tensor;

SpdConfig micro_spd() {
  SpdConfig c;
  c.backbone.width_multiplier = 0.0625;
  c.backbone.blocks = {1, 1, 1, 1};
  c.aspp.branch_channels = 16;
  return c;
}

TEST(SpdLoss, HandArithmetic) {
  const Var ones = constant(Tensor({1, 1, 2, 2}, 1.0)), zeros = constant(Tensor({1, 1, 2, 2}));
  // mean over pixels then root
  EXPECT_DOUBLE_EQ(spd_loss(ones, zeros).value()[0], 1.0);
  EXPECT_DOUBLE_EQ(spd_loss(ones, ones).value()[0], 0.0);
  // per-sample RMSE averaged over the batch
  Tensor mixed({2, 1, 2, 2}), target({2, 1, 2, 2});
  for (int i = 0; i < 4; ++i) mixed[i] = 1.0;
  EXPECT_DOUBLE_EQ(spd_loss(constant(mixed), constant(target)).value()[0], 0.5);
  EXPECT_THROW(spd_loss(ones, constant(Tensor({1, 1, 2, 3}))), Error);
}

TEST(SpdLoss, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor a = random_tensor({2, 1, 4, 4}, rng, 0, 1);
    Tensor b = a;
    EXPECT_NEAR(spd_loss(constant(a), constant(b)).value()[0], 0.0, 1e-7);
    b[rng.uniform_int(0, 31)] += 1e-3;
    EXPECT_GT(spd_loss(constant(a), constant(b)).value()[0], 0.0);
  }
}

TEST(SpdLoss, GradientThroughLogits) {
  Rng rng(2);
  Var logits(random_tensor({2, 1, 4, 4}, rng, -2, 2), true);
  const Tensor target = random_tensor({2, 1, 4, 4}, rng, 0, 1);
  const auto r = check_gradients([&] { return spd_loss(ops::sigmoid(logits), constant(target)); }, {logits});
  EXPECT_TRUE(r.ok()) << "worst " << r.worst;
}

TEST(SpdNetwork, OutputShapesAndRange) {
  const SpdNetwork net(micro_spd(), 1);
  Rng rng(3);
  const SpdOutput out = net.forward(constant(random_tensor({2, 3, 64, 96}, rng, 0, 1)));
  EXPECT_EQ(out.mask.shape(), (Shape{2, 1, 4, 6}));
  for (double v : out.mask.value().values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto ch = micro_spd().backbone.stage_channels();
  EXPECT_EQ(out.pyramid.stages[0].shape(), (Shape{2, ch[1], 8, 12}));
  EXPECT_EQ(out.pyramid.stages[1].shape(), (Shape{2, ch[2], 4, 6}));
  EXPECT_EQ(out.pyramid.stages[2].shape(), (Shape{2, ch[3], 4, 6}));
}

TEST(SpdNetwork, FullScaleGuidanceWidths) {
  const SpdConfig full;
  const auto ch = full.backbone.stage_channels();
  EXPECT_EQ(ch[1], 512);
  EXPECT_EQ(ch[2], 1024);
  EXPECT_EQ(ch[3], 2048);
  EXPECT_EQ(full.backbone.strides(), (std::array<int, 4>{4, 8, 16, 16}));
}

TEST(SpdNetwork, SaturatedHeadBias) {
  SpdNetwork net(micro_spd(), 2);
  net.head_bias().mutable_value().fill(10.0);
  net.head_weight().mutable_value().fill(0.0);
  Rng rng(4);
  NoGradGuard guard;
  const SpdOutput out = net.forward(constant(random_tensor({1, 3, 32, 32}, rng, 0, 1)));
  for (double v : out.mask.value().values()) EXPECT_GT(v, 0.9999);
}

TEST(SpdNetwork, UninitializedAndNonDivisibleAreRejected) {
  const SpdNetwork blank;
  EXPECT_THROW(blank.forward(constant(Tensor({1, 3, 32, 32}))), Error);
  const SpdNetwork net(micro_spd(), 3);
  EXPECT_THROW(net.forward(constant(Tensor({1, 3, 48, 32}))), Error);
}

TEST(SpdNetwork, CaptionBackboneTransfer) {
  const SpdConfig cfg = micro_spd();
  SpdNetwork net(cfg, 4);
  Rng rng(5);
  const Var img = constant(random_tensor({1, 3, 32, 32}, rng, 0, 1));
  Tensor before;
  {
    NoGradGuard guard;
    before = net.forward(img).mask.value();
  }

  Tokenizer tok;
  tok.fit({"a red disc"});
  CaptionerConfig cc;
  cc.backbone = cfg.backbone;
  cc.backbone.output_stride = 32;
  cc.decoder.vocab_size = tok.size();
  cc.decoder.model_width = 8;
  cc.decoder.heads = 2;
  cc.decoder.layers = 1;
  const Captioner cap(cc, tok, 99);
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::size_t backbone_tensors = 0;
  for (const auto& [name, v] : cap.params().entries()) {
    tensors.emplace_back(name, v.value());
    backbone_tensors += name.rfind("backbone.", 0) == 0;
  }
  EXPECT_EQ(net.load_backbone(tensors), backbone_tensors);
  for (const auto& [name, v] : cap.params().entries())
    if (name.rfind("backbone.", 0) == 0) {
      EXPECT_EQ(testing::flat(net.params().get(name).value()), testing::flat(v.value())) << name;
    }

  NoGradGuard guard;
  const Tensor after = net.forward(img).mask.value();
  EXPECT_EQ(after.shape(), before.shape());
  EXPECT_NE(testing::flat(after), testing::flat(before));
}

}  // namespace
}  // namespace spgim
