#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spgim/backbone.hpp"
#include "spgim/image.hpp"
#include "spgim/optim.hpp"

namespace spgim {

// ---------------------------------------------------------------------------
// tokenization

/// Word-level tokenizer: lower-cased alphanumeric words, every punctuation mark
/// is its own token, words below `min_count` map to [UNK].
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;

  Tokenizer();
  static std::vector<std::string> split(const std::string& text);
  void fit(const std::vector<std::string>& corpus, int min_count = 1);
  static Tokenizer from_vocabulary(std::vector<std::string> words);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& vocabulary() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

enum class CaptionDirection { kForward, kBackward };

/// [SOS] c_1 ... c_T [EOS]; the backward direction reverses the words only.
struct CaptionSequence {
  std::vector<int> tokens;
  CaptionDirection direction = CaptionDirection::kForward;
};

/// Wraps word ids with the delimiters, truncating words so the sequence fits in
/// `max_len` tokens.
CaptionSequence make_caption(const std::vector<int>& word_ids, CaptionDirection direction, int max_len);

// ---------------------------------------------------------------------------
// textual decoder

struct TextualDecoderConfig {
  int layers = 2;
  int heads = 4;
  int model_width = 128;
  int vocab_size = 0;
  int max_len = 30;
  int ffn_multiplier = 4;

  void validate() const;
};

/// Per-layer attention probabilities captured during a forward pass.
struct AttentionTrace {
  struct Layer {
    std::vector<Tensor> self_attention;   // per head, [T, T]
    std::vector<Tensor> cross_attention;  // per head, [T, N_I]
    Tensor cross_query_input;             // normalized hidden state fed to cross-attention, [T, D]
  };
  std::vector<Layer> layers;
};

struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int width, int heads, Rng& rng);
  /// queries[Tq, D] attend over keys_values[Tk, D].
  Var operator()(const Var& queries, const Var& keys_values, bool causal, std::vector<Tensor>* probs = nullptr) const;

  Linear q, k, v, o;
  int heads = 1;
};

struct DecoderLayer {
  LayerNorm norm_self, norm_cross, norm_ffn;
  MultiHeadAttention self_attention, cross_attention;
  Linear ffn_in, ffn_out;
};

/// Pre-norm transformer decoder: causal self-attention over caption tokens,
/// cross-attention over grid features, position-wise feed-forward.
class TextualDecoder {
 public:
  TextualDecoder() = default;
  TextualDecoder(ParamStore& store, const std::string& prefix, const TextualDecoderConfig& cfg, Rng& rng);

  /// Logits [T, vocab] for tokens[0..T-1] given grid[N_I, D].
  Var forward(const Var& grid, const std::vector<int>& tokens, AttentionTrace* trace = nullptr) const;
  const TextualDecoderConfig& config() const { return cfg_; }

 private:
  TextualDecoderConfig cfg_;
  Var token_embedding_;
  Var position_embedding_;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
  Linear output_;
};

/// Teacher-forced mean cross-entropy: predicts tokens[1..] from tokens[..T].
Var caption_loss(const TextualDecoder& decoder, const Var& grid, const CaptionSequence& caption);

// ---------------------------------------------------------------------------
// captioning model

struct CaptionerConfig {
  VisualBackboneConfig backbone;
  TextualDecoderConfig decoder;
  /// Backward captions reuse the forward decoder when set.
  bool shared_decoder = false;

  /// Desk-scale defaults: width 0.25, 2 layers x 4 heads x width 128, max_len 30.
  static CaptionerConfig desk(int vocab_size);
};

/// N_I x D_I grid tokens, row-major over the (H/32) x (W/32) grid.
struct GridFeatures {
  Tensor tokens;
  int grid_h = 0;
  int grid_w = 0;
};

struct WordAttentionMap {
  std::string word;
  AlphaMatte map;  // grid_h x grid_w, non-negative, sums to 1
};

struct WordAttentionExport {
  std::vector<WordAttentionMap> maps;
  std::map<std::string, std::string> metadata;
};

class Captioner {
 public:
  Captioner(const CaptionerConfig& cfg, Tokenizer tokenizer, std::uint64_t seed);

  const CaptionerConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const VisualBackbone& backbone() const { return backbone_; }
  const TextualDecoder& forward_decoder() const { return forward_decoder_; }
  const TextualDecoder& backward_decoder() const { return cfg_.shared_decoder ? forward_decoder_ : backward_decoder_; }

  long trained_steps = 0;

  /// Projected grid tokens for a batch [N,3,H,W]; one [N_I, D] matrix per sample.
  std::vector<Var> encode_batch(const Var& images) const;
  GridFeatures encode_image(const ImagePlane& image) const;

  /// Next-token distribution after `prefix` (which must start with [SOS]).
  std::vector<double> caption_step(const GridFeatures& grid, const CaptionSequence& prefix) const;
  /// Logits for every prefix position, [T, vocab].
  Tensor prefix_logits(const GridFeatures& grid, const CaptionSequence& prefix) const;

  /// Mean over samples of (forward CE + backward CE) / 2. Samples with empty
  /// captions are skipped and counted in `skipped`.
  Var bicaption_loss(const Var& images, const std::vector<std::string>& captions, int* skipped = nullptr) const;

  WordAttentionExport export_word_attention(const GridFeatures& grid, const CaptionSequence& caption) const;

  /// Parameter groups: visual backbone, everything else (projection + decoders).
  std::vector<ParamGroup> parameter_groups() const;

 private:
  CaptionerConfig cfg_;
  Tokenizer tokenizer_;
  ParamStore params_;
  VisualBackbone backbone_;
  Linear projection_;
  TextualDecoder forward_decoder_;
  TextualDecoder backward_decoder_;
};

struct PretrainSchedule {
  double backbone_max_lr = 0.2;
  double decoder_max_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  long warmup_steps = 10;
  long total_steps = 100;

  void validate() const;
  double backbone_lr(long step) const;
  double decoder_lr(long step) const;
};

struct CaptionPair {
  ImagePlane image;
  std::string caption;
};

struct BicaptionStepResult {
  double loss = 0.0;
  int skipped = 0;
};

/// SGD-momentum trainer with separate warmup-cosine schedules for the backbone
/// and the decoder side.
class CaptionTrainer {
 public:
  CaptionTrainer(Captioner& model, PretrainSchedule schedule);
  BicaptionStepResult train_bicaption(const std::vector<CaptionPair>& batch);
  long step() const { return step_; }

 private:
  Captioner& model_;
  PretrainSchedule schedule_;
  Sgd optimizer_;
  long step_ = 0;
};

/// Stacks same-sized images into [N,3,H,W].
Tensor stack_images(const std::vector<ImagePlane>& images);
void require_divisible(int height, int width, int multiple, const char* what);

}  // namespace spgim
