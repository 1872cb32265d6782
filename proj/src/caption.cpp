#include "spgim/caption.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace spgim {

// ---------------------------------------------------------------------------
// Tokenizer

Tokenizer::Tokenizer() : words_{"[PAD]", "[UNK]", "[SOS]", "[EOS]"} {
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) index_[words_[static_cast<std::size_t>(i)]] = i;
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
      if (std::ispunct(ch)) out.emplace_back(1, static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

void Tokenizer::fit(const std::vector<std::string>& corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& text : corpus)
    for (auto& w : split(text)) ++counts[w];
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count && !index_.count(w)) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [w, c] : kept) {
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }
}

Tokenizer Tokenizer::from_vocabulary(std::vector<std::string> words) {
  Tokenizer t;
  if (words.size() < 4 || words[0] != "[PAD]" || words[1] != "[UNK]" || words[2] != "[SOS]" || words[3] != "[EOS]")
    throw Error("vocabulary must start with [PAD] [UNK] [SOS] [EOS]");
  t.words_ = std::move(words);
  t.index_.clear();
  for (int i = 0; i < static_cast<int>(t.words_.size()); ++i) t.index_[t.words_[static_cast<std::size_t>(i)]] = i;
  return t;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kSos || id == kEos || id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += (id >= 0 && id < size()) ? words_[static_cast<std::size_t>(id)] : "[UNK]";
  }
  return out;
}

CaptionSequence make_caption(const std::vector<int>& word_ids, CaptionDirection direction, int max_len) {
  if (max_len < 2) throw Error("make_caption: max_len must leave room for [SOS] and [EOS]");
  CaptionSequence seq;
  seq.direction = direction;
  const std::size_t n = std::min(word_ids.size(), static_cast<std::size_t>(max_len - 2));
  std::vector<int> words(word_ids.begin(), word_ids.begin() + static_cast<long>(n));
  if (direction == CaptionDirection::kBackward) std::reverse(words.begin(), words.end());
  seq.tokens.push_back(Tokenizer::kSos);
  seq.tokens.insert(seq.tokens.end(), words.begin(), words.end());
  seq.tokens.push_back(Tokenizer::kEos);
  return seq;
}

// ---------------------------------------------------------------------------
// decoder

void TextualDecoderConfig::validate() const {
  if (layers < 1 || heads < 1 || model_width < 1) throw Error("decoder: layers, heads and width must be positive");
  if (model_width % heads != 0)
    throw Error("decoder: model width " + std::to_string(model_width) + " not divisible by " + std::to_string(heads) +
                " heads");
  if (vocab_size < 1) throw Error("decoder: empty vocabulary");
  if (max_len < 2) throw Error("decoder: max_len must be at least 2");
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, int width, int h, Rng& rng)
    : q(store, name + ".q", width, width, rng),
      k(store, name + ".k", width, width, rng),
      v(store, name + ".v", width, width, rng),
      o(store, name + ".o", width, width, rng),
      heads(h) {}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys_values, bool causal,
                                   std::vector<Tensor>* probs) const {
  const int width = queries.dim(1);
  const int dh = width / heads;
  Var Q = q(queries), K = k(keys_values), V = v(keys_values);
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Var qh = ops::slice_cols(Q, h * dh, (h + 1) * dh);
    Var kh = ops::slice_cols(K, h * dh, (h + 1) * dh);
    Var vh = ops::slice_cols(V, h * dh, (h + 1) * dh);
    Var p = ops::softmax_rows(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), causal);
    if (probs) probs->push_back(p.value());
    outs.push_back(ops::matmul(p, vh));
  }
  return o(heads == 1 ? outs[0] : ops::concat_cols(outs));
}

TextualDecoder::TextualDecoder(ParamStore& store, const std::string& prefix, const TextualDecoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int D = cfg.model_width;
  Tensor emb({cfg.vocab_size, D});
  for (double& x : emb.values()) x = rng.normal(0.0, 0.02);
  token_embedding_ = store.add(prefix + ".token_embedding", std::move(emb));
  Tensor pos({cfg.max_len, D});
  for (double& x : pos.values()) x = rng.normal(0.0, 0.02);
  position_embedding_ = store.add(prefix + ".position_embedding", std::move(pos));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string n = prefix + ".layer" + std::to_string(l);
    DecoderLayer layer;
    layer.norm_self = LayerNorm(store, n + ".norm_self", D);
    layer.self_attention = MultiHeadAttention(store, n + ".self_attention", D, cfg.heads, rng);
    layer.norm_cross = LayerNorm(store, n + ".norm_cross", D);
    layer.cross_attention = MultiHeadAttention(store, n + ".cross_attention", D, cfg.heads, rng);
    layer.norm_ffn = LayerNorm(store, n + ".norm_ffn", D);
    layer.ffn_in = Linear(store, n + ".ffn_in", D, D * cfg.ffn_multiplier, rng);
    layer.ffn_out = Linear(store, n + ".ffn_out", D * cfg.ffn_multiplier, D, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm(store, prefix + ".final_norm", D);
  output_ = Linear(store, prefix + ".output", D, cfg.vocab_size, rng);
}

Var TextualDecoder::forward(const Var& grid, const std::vector<int>& tokens, AttentionTrace* trace) const {
  const int T = static_cast<int>(tokens.size());
  if (T < 1) throw Error("decoder: empty token sequence");
  if (T > cfg_.max_len)
    throw Error("decoder: prefix of " + std::to_string(T) + " tokens exceeds max_len " + std::to_string(cfg_.max_len));
  if (grid.value().rank() != 2 || grid.dim(1) != cfg_.model_width)
    throw Error("decoder: grid features must be [N_I, " + std::to_string(cfg_.model_width) + "], got " +
                shape_str(grid.shape()));
  std::vector<int> positions(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) positions[static_cast<std::size_t>(t)] = t;
  Var x = ops::add(ops::embedding(token_embedding_, tokens), ops::embedding(position_embedding_, positions));
  if (trace) trace->layers.clear();
  for (const DecoderLayer& layer : layers_) {
    AttentionTrace::Layer* rec = nullptr;
    if (trace) rec = &trace->layers.emplace_back();
    Var h = layer.norm_self(x);
    x = ops::add(x, layer.self_attention(h, h, true, rec ? &rec->self_attention : nullptr));
    Var q = layer.norm_cross(x);
    if (rec) rec->cross_query_input = q.value();
    x = ops::add(x, layer.cross_attention(q, grid, false, rec ? &rec->cross_attention : nullptr));
    x = ops::add(x, layer.ffn_out(ops::relu(layer.ffn_in(layer.norm_ffn(x)))));
  }
  return output_(final_norm_(x));
}

Var caption_loss(const TextualDecoder& decoder, const Var& grid, const CaptionSequence& caption) {
  if (caption.tokens.size() < 2) throw Error("caption_loss: caption needs at least [SOS] and [EOS]");
  std::vector<int> inputs(caption.tokens.begin(), caption.tokens.end() - 1);
  std::vector<int> targets(caption.tokens.begin() + 1, caption.tokens.end());
  return ops::cross_entropy(decoder.forward(grid, inputs), targets);
}

// ---------------------------------------------------------------------------
// Captioner

CaptionerConfig CaptionerConfig::desk(int vocab_size) {
  CaptionerConfig c;
  c.backbone.width_multiplier = 0.25;
  c.backbone.output_stride = 32;
  c.decoder.layers = 2;
  c.decoder.heads = 4;
  c.decoder.model_width = 128;
  c.decoder.max_len = 30;
  c.decoder.vocab_size = vocab_size;
  return c;
}

Captioner::Captioner(const CaptionerConfig& cfg, Tokenizer tokenizer, std::uint64_t seed)
    : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
  if (cfg_.decoder.vocab_size != tokenizer_.size())
    throw Error("captioner: decoder vocabulary (" + std::to_string(cfg_.decoder.vocab_size) +
                ") does not match tokenizer (" + std::to_string(tokenizer_.size()) + ")");
  if (cfg_.backbone.output_stride != 32) throw Error("captioner: grid features are taken at stride 32");
  Rng rng(seed);
  backbone_ = VisualBackbone(params_, "backbone", cfg_.backbone, rng);
  projection_ = Linear(params_, "projection", cfg_.backbone.stage_channels()[3], cfg_.decoder.model_width, rng);
  forward_decoder_ = TextualDecoder(params_, "decoder_forward", cfg_.decoder, rng);
  if (!cfg_.shared_decoder) backward_decoder_ = TextualDecoder(params_, "decoder_backward", cfg_.decoder, rng);
}

void require_divisible(int height, int width, int multiple, const char* what) {
  if (height % multiple == 0 && width % multiple == 0 && height > 0 && width > 0) return;
  const int ph = (multiple - height % multiple) % multiple;
  const int pw = (multiple - width % multiple) % multiple;
  throw Error(std::string(what) + ": input " + std::to_string(height) + "x" + std::to_string(width) +
              " must be divisible by " + std::to_string(multiple) + "; pad by " + std::to_string(ph) + " rows and " +
              std::to_string(pw) + " columns");
}

std::vector<Var> Captioner::encode_batch(const Var& images) const {
  require_divisible(images.dim(2), images.dim(3), 32, "encode_image");
  Var c4 = backbone_.forward(images)[3];
  std::vector<Var> out;
  for (int n = 0; n < images.dim(0); ++n) out.push_back(projection_(ops::to_tokens(c4, n)));
  return out;
}

GridFeatures Captioner::encode_image(const ImagePlane& image) const {
  require_divisible(image.height(), image.width(), 32, "encode_image");
  NoGradGuard guard;
  GridFeatures g;
  g.tokens = encode_batch(constant(image.to_tensor()))[0].value();
  g.grid_h = image.height() / 32;
  g.grid_w = image.width() / 32;
  return g;
}

namespace {

const TextualDecoder& pick(const Captioner& c, CaptionDirection d) {
  return d == CaptionDirection::kForward ? c.forward_decoder() : c.backward_decoder();
}

void require_sos(const CaptionSequence& s) {
  if (s.tokens.empty() || s.tokens.front() != Tokenizer::kSos) throw Error("caption prefix must start with [SOS]");
}

}  // namespace

Tensor Captioner::prefix_logits(const GridFeatures& grid, const CaptionSequence& prefix) const {
  require_sos(prefix);
  NoGradGuard guard;
  return pick(*this, prefix.direction).forward(constant(grid.tokens), prefix.tokens).value();
}

std::vector<double> Captioner::caption_step(const GridFeatures& grid, const CaptionSequence& prefix) const {
  Tensor logits = prefix_logits(grid, prefix);
  const int T = logits.dim(0), V = logits.dim(1);
  std::vector<double> p(static_cast<std::size_t>(V));
  double mx = -1e300;
  for (int v = 0; v < V; ++v) mx = std::max(mx, logits.at(T - 1, v));
  double s = 0.0;
  for (int v = 0; v < V; ++v) s += (p[static_cast<std::size_t>(v)] = std::exp(logits.at(T - 1, v) - mx));
  for (double& x : p) x /= s;
  return p;
}

Var Captioner::bicaption_loss(const Var& images, const std::vector<std::string>& captions, int* skipped) const {
  if (static_cast<int>(captions.size()) != images.dim(0)) throw Error("bicaption_loss: one caption per image");
  std::vector<Var> grids = encode_batch(images);
  std::vector<Var> terms;
  int skip = 0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const std::vector<int> ids = tokenizer_.encode(captions[i]);
    if (ids.empty()) {
      ++skip;
      continue;
    }
    terms.push_back(caption_loss(forward_decoder_, grids[i],
                                 make_caption(ids, CaptionDirection::kForward, cfg_.decoder.max_len)));
    terms.push_back(caption_loss(backward_decoder(), grids[i],
                                 make_caption(ids, CaptionDirection::kBackward, cfg_.decoder.max_len)));
  }
  if (skipped) *skipped = skip;
  if (terms.empty()) return constant(Tensor({1}, 0.0));
  return ops::add_scalars(terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(terms.size())));
}

WordAttentionExport Captioner::export_word_attention(const GridFeatures& grid, const CaptionSequence& caption) const {
  require_sos(caption);
  if (caption.tokens.size() < 2 || caption.tokens.back() != Tokenizer::kEos)
    throw Error("export_word_attention: caption must end with [EOS]");
  NoGradGuard guard;
  AttentionTrace trace;
  const std::vector<int> inputs(caption.tokens.begin(), caption.tokens.end() - 1);
  pick(*this, caption.direction).forward(constant(grid.tokens), inputs, &trace);
  const auto& heads = trace.layers.back().cross_attention;
  WordAttentionExport out;
  // Word c_t is predicted from query position t-1.
  for (std::size_t t = 1; t + 1 < caption.tokens.size(); ++t) {
    WordAttentionMap m;
    m.word = tokenizer_.decode({caption.tokens[t]});
    m.map = AlphaMatte(grid.grid_h, grid.grid_w);
    for (const Tensor& p : heads)
      for (int i = 0; i < grid.grid_h * grid.grid_w; ++i)
        m.map.data()[static_cast<std::size_t>(i)] += p.at(static_cast<int>(t) - 1, i) / static_cast<double>(heads.size());
    out.maps.push_back(std::move(m));
  }
  out.metadata["layer"] = std::to_string(trace.layers.size() - 1);
  out.metadata["heads_averaged"] = std::to_string(heads.size());
  out.metadata["trained_steps"] = std::to_string(trained_steps);
  if (trained_steps == 0) out.metadata["warning"] = "untrained weights: attention maps are not meaningful";
  return out;
}

std::vector<ParamGroup> Captioner::parameter_groups() const {
  ParamGroup visual, text;
  for (const auto& [name, v] : params_.entries()) (name.rfind("backbone.", 0) == 0 ? visual : text).params.push_back(v);
  return {visual, text};
}

// ---------------------------------------------------------------------------
// training

void PretrainSchedule::validate() const {
  if (warmup_steps <= 0) throw Error("pretrain schedule: warmup steps must be positive");
  if (total_steps <= warmup_steps) throw Error("pretrain schedule: total steps must exceed warmup");
}

double PretrainSchedule::backbone_lr(long step) const {
  return warmup_cosine_lr(step, warmup_steps, total_steps, backbone_max_lr);
}

double PretrainSchedule::decoder_lr(long step) const {
  return warmup_cosine_lr(step, warmup_steps, total_steps, decoder_max_lr);
}

Tensor stack_images(const std::vector<ImagePlane>& images) {
  if (images.empty()) throw Error("stack_images: empty batch");
  const int h = images[0].height(), w = images[0].width();
  Tensor out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t per = static_cast<std::size_t>(3) * h * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_size(h, w)) throw Error("stack_images: images differ in size");
    std::copy(images[i].data().begin(), images[i].data().end(), out.data() + i * per);
  }
  return out;
}

CaptionTrainer::CaptionTrainer(Captioner& model, PretrainSchedule schedule)
    : model_(model),
      schedule_(schedule),
      optimizer_((schedule.validate(), model.parameter_groups()), schedule.momentum, schedule.weight_decay) {}

BicaptionStepResult CaptionTrainer::train_bicaption(const std::vector<CaptionPair>& batch) {
  std::vector<ImagePlane> images;
  std::vector<std::string> captions;
  for (const auto& p : batch) {
    images.push_back(p.image);
    captions.push_back(p.caption);
  }
  BicaptionStepResult r;
  optimizer_.zero_grad();
  Var loss = model_.bicaption_loss(constant(stack_images(images)), captions, &r.skipped);
  r.loss = loss.value()[0];
  backward(loss);
  optimizer_.step(std::vector<double>{schedule_.backbone_lr(step_), schedule_.decoder_lr(step_)});
  ++step_;
  ++model_.trained_steps;
  return r;
}

}  // namespace spgim
