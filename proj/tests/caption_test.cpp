#include <gtest/gtest.h>

#include <numeric>

#include "spgim/caption.hpp"
#include "spgim/synthetic.hpp"
#include "support.hpp"

namespace spgim {
namespace {

using testing::check_gradients;
using testing::random_image;
using testing::random_tensor;

TEST(Tokenizer, SplitsWordsAndPunctuation) {
  EXPECT_EQ(Tokenizer::split("A dog, running!"), (std::vector<std::string>{"a", "dog", ",", "running", "!"}));
  EXPECT_EQ(Tokenizer::split("  "), std::vector<std::string>{});
}

TEST(Tokenizer, FrequencyThresholdAndUnknown) {
  Tokenizer t;
  t.fit({"a cat", "a dog", "a cat ."}, 2);
  EXPECT_EQ(t.size(), 6);  // 4 specials + "a" + "cat"
  EXPECT_EQ(t.vocabulary()[4], "a");
  const auto ids = t.encode("a dog cat");
  EXPECT_EQ(ids, (std::vector<int>{4, Tokenizer::kUnk, 5}));
  EXPECT_EQ(t.decode({Tokenizer::kSos, 4, 5, Tokenizer::kEos}), "a cat");
  EXPECT_EQ(Tokenizer::from_vocabulary(t.vocabulary()).encode("cat a"), (std::vector<int>{5, 4}));
  EXPECT_THROW(Tokenizer::from_vocabulary({"a", "b"}), Error);
}

TEST(CaptionSequence, DelimitersReversalAndTruncation) {
  const auto f = make_caption({7, 8, 9}, CaptionDirection::kForward, 30);
  EXPECT_EQ(f.tokens, (std::vector<int>{Tokenizer::kSos, 7, 8, 9, Tokenizer::kEos}));
  const auto b = make_caption({7, 8, 9}, CaptionDirection::kBackward, 30);
  EXPECT_EQ(b.tokens, (std::vector<int>{Tokenizer::kSos, 9, 8, 7, Tokenizer::kEos}));
  const auto cut = make_caption({7, 8, 9}, CaptionDirection::kForward, 4);
  EXPECT_EQ(cut.tokens, (std::vector<int>{Tokenizer::kSos, 7, 8, Tokenizer::kEos}));
}

TextualDecoderConfig tiny_decoder(int vocab = 6) {
  TextualDecoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_width = 8;
  c.vocab_size = vocab;
  c.max_len = 8;
  c.ffn_multiplier = 2;
  return c;
}

TEST(TextualDecoder, CausalPrefixLogitsAreStable) {
  Rng rng(1);
  ParamStore store;
  const TextualDecoder dec(store, "d", tiny_decoder(), rng);
  const Var grid = constant(random_tensor({5, 8}, rng));
  std::vector<int> tokens{Tokenizer::kSos};
  for (int len = 2; len <= 8; ++len) {
    const Tensor shorter = dec.forward(grid, tokens).value();
    tokens.push_back(rng.uniform_int(0, 5));
    const Tensor longer = dec.forward(grid, tokens).value();
    for (int t = 0; t < shorter.dim(0); ++t)
      for (int v = 0; v < 6; ++v) EXPECT_NEAR(shorter.at(t, v), longer.at(t, v), 1e-6);
  }
  tokens.push_back(1);
  EXPECT_THROW(dec.forward(grid, tokens), Error);
}

TEST(TextualDecoder, AttentionRowsAreDistributions) {
  Rng rng(2);
  ParamStore store;
  const TextualDecoder dec(store, "d", tiny_decoder(), rng);
  AttentionTrace trace;
  dec.forward(constant(random_tensor({7, 8}, rng, -3, 3)), {2, 4, 5, 1, 0}, &trace);
  ASSERT_EQ(trace.layers.size(), 2u);
  for (const auto& layer : trace.layers) {
    ASSERT_EQ(layer.self_attention.size(), 2u);
    ASSERT_EQ(layer.cross_attention.size(), 2u);
    for (const auto* group : {&layer.self_attention, &layer.cross_attention})
      for (const Tensor& p : *group)
        for (int r = 0; r < p.dim(0); ++r) {
          double s = 0;
          for (int c = 0; c < p.dim(1); ++c) {
            EXPECT_GE(p.at(r, c), 0.0);
            s += p.at(r, c);
          }
          EXPECT_NEAR(s, 1.0, 1e-5);
        }
    for (const Tensor& p : layer.self_attention)
      for (int r = 0; r < 5; ++r)
        for (int c = r + 1; c < 5; ++c) EXPECT_EQ(p.at(r, c), 0.0);
  }
}

TEST(TextualDecoder, CaptionLossGradient) {
  Rng rng(3);
  ParamStore store;
  TextualDecoderConfig c = tiny_decoder(2);
  c.layers = 1;
  c.heads = 2;
  c.max_len = 6;
  const TextualDecoder dec(store, "d", c, rng);
  Var grid(random_tensor({3, 8}, rng), true);
  CaptionSequence seq;
  seq.tokens = {0, 1, 1, 0, 1};
  std::vector<Var> leaves = store.vars();
  leaves.push_back(grid);
  const auto r = check_gradients([&] { return caption_loss(dec, grid, seq); }, leaves, 1e-3, 1e-7, 1e-6, 12);
  EXPECT_TRUE(r.ok()) << "worst " << r.worst << " over " << r.checked;
}

Captioner micro_captioner(bool shared = false, std::uint64_t seed = 5) {
  Tokenizer tok;
  tok.fit({"a small green square on a red background .", "a red disc"});
  CaptionerConfig c;
  c.backbone.width_multiplier = 0.0625;
  c.backbone.blocks = {1, 1, 1, 1};
  c.decoder = tiny_decoder(tok.size());
  c.decoder.max_len = 12;
  c.shared_decoder = shared;
  return Captioner(c, tok, seed);
}

TEST(Captioner, GridTokenCounts) {
  const Captioner cap = micro_captioner();
  Rng rng(4);
  const GridFeatures g = cap.encode_image(random_image(64, 64, rng));
  EXPECT_EQ(g.tokens.dim(0), 4);
  EXPECT_EQ(g.tokens.dim(1), 8);
  EXPECT_EQ(cap.encode_image(random_image(224, 224, rng)).tokens.dim(0), 49);
  // full-scale channel layout and the 1/32 grid
  const VisualBackboneConfig full;
  EXPECT_EQ(full.stage_channels(), (std::array<int, 4>{256, 512, 1024, 2048}));
  EXPECT_EQ(full.strides()[3], 32);
}

TEST(Captioner, EncodingIsDeterministic) {
  const Captioner cap = micro_captioner();
  Rng rng(5);
  const ImagePlane img = random_image(32, 64, rng);
  EXPECT_EQ(testing::flat(cap.encode_image(img).tokens), testing::flat(cap.encode_image(img).tokens));
}

TEST(Captioner, NonDivisibleInputStatesPadding) {
  const Captioner cap = micro_captioner();
  try {
    cap.encode_image(ImagePlane(40, 64));
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pad by 24 rows and 0 columns"), std::string::npos) << e.what();
  }
}

TEST(Captioner, StepDistributionAndPrefixLimit) {
  const Captioner cap = micro_captioner();
  Rng rng(6);
  const GridFeatures g = cap.encode_image(random_image(64, 64, rng));
  CaptionSequence prefix;
  prefix.tokens = {Tokenizer::kSos};
  const auto first = cap.caption_step(g, prefix);
  EXPECT_NEAR(std::accumulate(first.begin(), first.end(), 0.0), 1.0, 1e-5);
  const Tensor before = cap.prefix_logits(g, prefix);
  prefix.tokens.push_back(5);
  const Tensor after = cap.prefix_logits(g, prefix);
  for (int v = 0; v < before.dim(1); ++v) EXPECT_NEAR(before.at(0, v), after.at(0, v), 1e-12);
  prefix.tokens.assign(13, 4);
  prefix.tokens[0] = Tokenizer::kSos;
  EXPECT_THROW(cap.caption_step(g, prefix), Error);
  prefix.tokens = {4};
  EXPECT_THROW(cap.caption_step(g, prefix), Error);
}

TEST(Captioner, EmptyCaptionsAreSkipped) {
  const Captioner cap = micro_captioner();
  Rng rng(7);
  const Tensor imgs = stack_images({random_image(32, 32, rng), random_image(32, 32, rng)});
  int skipped = -1;
  const double loss = cap.bicaption_loss(constant(imgs), {"a red disc", "  "}, &skipped).value()[0];
  EXPECT_EQ(skipped, 1);
  EXPECT_GT(loss, 0.0);
}

TEST(Captioner, PalindromeGivesEqualDirectionalLosses) {
  const Captioner cap = micro_captioner(true);
  Rng rng(8);
  const Var grid = constant(cap.encode_image(random_image(32, 32, rng)).tokens);
  const auto ids = cap.tokenizer().encode("a red a");
  const auto f = make_caption(ids, CaptionDirection::kForward, 12);
  const auto b = make_caption(ids, CaptionDirection::kBackward, 12);
  EXPECT_EQ(caption_loss(cap.forward_decoder(), grid, f).value()[0],
            caption_loss(cap.backward_decoder(), grid, b).value()[0]);
}

TEST(Captioner, WordAttentionMatchesHeadLoop) {
  Captioner cap = micro_captioner();
  Rng rng(9);
  const GridFeatures g = cap.encode_image(random_image(64, 96, rng));
  const auto seq = make_caption(cap.tokenizer().encode("a small green square"), CaptionDirection::kForward, 12);
  const WordAttentionExport ex = cap.export_word_attention(g, seq);
  ASSERT_EQ(ex.maps.size(), 4u);
  EXPECT_EQ(ex.maps[2].word, "green");
  EXPECT_TRUE(ex.metadata.count("warning"));

  // recompute the last layer's cross-attention from its weights
  AttentionTrace trace;
  const std::vector<int> inputs(seq.tokens.begin(), seq.tokens.end() - 1);
  cap.forward_decoder().forward(constant(g.tokens), inputs, &trace);
  const Tensor& q_in = trace.layers.back().cross_query_input;
  const std::string base = "decoder_forward.layer1.cross_attention.";
  const Tensor wq = cap.params().get(base + "q.weight").value(), bq = cap.params().get(base + "q.bias").value();
  const Tensor wk = cap.params().get(base + "k.weight").value(), bk = cap.params().get(base + "k.bias").value();
  const int D = 8, heads = 2, dh = D / heads, cells = 6;
  for (std::size_t w = 0; w < ex.maps.size(); ++w) {
    const int t = static_cast<int>(w);
    std::vector<double> avg(cells, 0.0);
    for (int h = 0; h < heads; ++h) {
      std::vector<double> logits(cells);
      for (int i = 0; i < cells; ++i) {
        double dot = 0;
        for (int j = h * dh; j < (h + 1) * dh; ++j) {
          double qj = bq[j], kj = bk[j];
          for (int d = 0; d < D; ++d) {
            qj += q_in.at(t, d) * wq.at(j, d);
            kj += g.tokens.at(i, d) * wk.at(j, d);
          }
          dot += qj * kj;
        }
        logits[i] = dot / std::sqrt(static_cast<double>(dh));
      }
      double z = 0;
      for (double l : logits) z += std::exp(l);
      for (int i = 0; i < cells; ++i) avg[i] += std::exp(logits[i]) / z / heads;
    }
    double s = 0;
    for (int i = 0; i < cells; ++i) {
      EXPECT_NEAR(ex.maps[w].map.data()[i], avg[i], 1e-12);
      s += ex.maps[w].map.data()[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  cap.trained_steps = 1;
  EXPECT_FALSE(cap.export_word_attention(g, seq).metadata.count("warning"));
}

TEST(PretrainSchedule, WarmupThenCosine) {
  const PretrainSchedule s;
  EXPECT_EQ(s.backbone_max_lr, 0.2);
  EXPECT_EQ(s.decoder_max_lr, 1e-3);
  EXPECT_EQ(s.momentum, 0.9);
  EXPECT_EQ(s.weight_decay, 1e-4);
  EXPECT_LT(s.backbone_lr(0), 0.2);
  EXPECT_NEAR(s.backbone_lr(s.warmup_steps), 0.2, 1e-12);
  EXPECT_NEAR(s.decoder_lr(s.total_steps), 0.0, 1e-12);
  PretrainSchedule bad;
  bad.warmup_steps = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(CaptionTrainer, ToyCorpusLossHalvesWithin200Steps) {
  const auto corpus = synthetic::make_caption_corpus(5, 64, 3);
  Tokenizer tok;
  std::vector<std::string> texts;
  for (const auto& p : corpus) texts.push_back(p.caption);
  tok.fit(texts);
  Captioner cap(CaptionerConfig::desk(tok.size()), tok, 11);
  PretrainSchedule sched;
  sched.warmup_steps = 10;
  sched.total_steps = 200;
  const auto loss_now = [&] {
    NoGradGuard guard;
    std::vector<ImagePlane> imgs;
    for (const auto& p : corpus) imgs.push_back(p.image);
    return cap.bicaption_loss(constant(stack_images(imgs)), texts).value()[0];
  };
  const double initial = loss_now();
  CaptionTrainer trainer(cap, sched);
  for (int s = 0; s < 200; ++s) trainer.train_bicaption(corpus);
  const double final_loss = loss_now();
  EXPECT_LT(final_loss, initial / 2) << initial << " -> " << final_loss;
}

}  // namespace
}  // namespace spgim
