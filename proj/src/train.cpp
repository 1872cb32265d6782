#include "spgim/train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "spgim/caption.hpp"

namespace spgim {

namespace {

VisualBackboneConfig backbone_for(const TrainConfig& cfg, int in_channels, int output_stride) {
  VisualBackboneConfig b;
  b.width_multiplier = cfg.width_multiplier;
  if (cfg.backbone_blocks.size() != b.blocks.size()) throw Error("backbone_blocks needs four stage depths");
  for (std::size_t i = 0; i < b.blocks.size(); ++i) b.blocks[i] = static_cast<int>(cfg.backbone_blocks[i]);
  b.in_channels = in_channels;
  b.output_stride = output_stride;
  return b;
}

}  // namespace

SpdConfig spd_config_for(const TrainConfig& cfg) {
  SpdConfig c;
  c.backbone = backbone_for(cfg, 3, 16);
  c.aspp.branch_channels = c.backbone.scaled(256);
  c.validate();
  return c;
}

SpgmConfig spgm_config_for(const TrainConfig& cfg, const SpdConfig& spd) {
  SpgmConfig c = SpgmConfig::for_spd(spd);
  if (!cfg.loss_weights.empty()) c.loss_weights = cfg.loss_weights;
  c.variant = parse_variant(cfg.variant);
  c.validate();
  return c;
}

CaptionerConfig captioner_config_for(const TrainConfig& cfg, int vocab_size) {
  CaptionerConfig c = CaptionerConfig::desk(vocab_size);
  c.backbone = backbone_for(cfg, 3, 32);
  return c;
}

std::vector<CompositeSample> load_training_set(const std::filesystem::path& manifest, int input_size,
                                               int saliency_downsample) {
  const DatasetManifest m = DatasetManifest::read(manifest);
  const auto base = manifest.parent_path();
  std::vector<CompositeSample> out;
  for (const auto& r : m.records) {
    CompositeSample s;
    s.image = read_image(base / r.image);
    s.alpha_gt = read_alpha(base / r.alpha);
    if (!s.alpha_gt.same_size(s.image)) throw Error("manifest: alpha and image sizes differ for " + r.image);
    if (input_size > 0 && !s.image.same_size(input_size, input_size)) {
      s.image = resize_bilinear(s.image, input_size, input_size);
      s.alpha_gt = resize_bilinear(s.alpha_gt, input_size, input_size);
      s.saliency_target = make_saliency_target(s.alpha_gt, saliency_downsample);
    } else {
      s.saliency_target.plane = read_alpha(base / r.saliency);
      s.saliency_target.downsample = saliency_downsample;
      const int d = saliency_downsample;
      if (!s.saliency_target.plane.same_size((s.image.height() + d - 1) / d, (s.image.width() + d - 1) / d))
        throw Error("manifest: saliency target " + r.saliency + " is not at 1/" + std::to_string(d));
    }
    if (!r.trimap.empty() && std::filesystem::exists(base / r.trimap) && s.image.same_size(input_size, input_size))
      s.trimap = read_trimap(base / r.trimap);
    s.foreground_id = r.fg_id;
    s.background_id = r.bg_id;
    s.seed = r.seed;
    s.flags = r.flags;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error("manifest " + manifest.string() + " has no records");
  return out;
}

std::vector<CaptionPair> load_caption_set(const std::filesystem::path& manifest, int input_size) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open caption manifest " + manifest.string());
  std::vector<CaptionPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("image") || !j.contains("caption"))
      throw Error(manifest.string() + ":" + std::to_string(line_no) + ": needs image and caption");
    ImagePlane img = read_image(manifest.parent_path() / j["image"].get<std::string>());
    if (input_size > 0 && !img.same_size(input_size, input_size))
      img = resize_cover_crop(img, input_size, input_size);
    out.push_back({std::move(img), j["caption"].get<std::string>()});
  }
  if (out.empty()) throw Error("caption manifest " + manifest.string() + " is empty");
  return out;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, std::vector<ParamGroup> groups) {
  if (cfg.optimizer == OptimizerKind::kAdam)
    return std::make_unique<Adam>(std::move(groups), cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
  return std::make_unique<Sgd>(std::move(groups), cfg.momentum, cfg.weight_decay);
}

Tensor stack_alphas(const std::vector<AlphaMatte>& alphas) {
  if (alphas.empty()) throw Error("stack_alphas: empty batch");
  const int h = alphas[0].height(), w = alphas[0].width();
  Tensor t({static_cast<int>(alphas.size()), 1, h, w});
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!alphas[i].same_size(h, w)) throw Error("stack_alphas: mattes differ in size");
    std::copy(alphas[i].data().begin(), alphas[i].data().end(), t.data() + i * alphas[i].data().size());
  }
  return t;
}

Tensor stack_saliency(const std::vector<const CompositeSample*>& batch) {
  std::vector<AlphaMatte> planes;
  for (const auto* s : batch) planes.push_back(s->saliency_target.plane);
  return stack_alphas(planes);
}

namespace {

Tensor stack_batch_images(const std::vector<const CompositeSample*>& batch) {
  std::vector<ImagePlane> images;
  for (const auto* s : batch) images.push_back(s->image);
  return stack_images(images);
}

Tensor stack_batch_alphas(const std::vector<const CompositeSample*>& batch) {
  std::vector<AlphaMatte> alphas;
  for (const auto* s : batch) alphas.push_back(s->alpha_gt);
  return stack_alphas(alphas);
}

/// Concatenates [1,...] tensors along the batch axis.
Tensor concat_tensors(const std::vector<const Tensor*>& parts) {
  Shape shape = parts[0]->shape();
  shape[0] = 0;
  for (const auto* p : parts) shape[0] += p->dim(0);
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    std::copy(p->data(), p->data() + p->size(), out.data() + offset);
    offset += p->size();
  }
  return out;
}

/// Batches of indices: shuffled passes, `batch` at a time.
class BatchStream {
 public:
  BatchStream(std::size_t n, int batch, std::uint64_t seed) : n_(n), batch_(batch), rng_(seed) {
    if (n == 0) throw Error("training set is empty");
  }
  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (static_cast<int>(out.size()) < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }
  std::size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.uniform_int(0, static_cast<int>(i - 1))]);
    pos_ = 0;
  }
  std::size_t n_;
  int batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <class Trainer>
TrainLog run_schedule(Trainer& trainer, const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                      const StepCallback& on_step) {
  TrainLog log;
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(data.size()));
  BatchStream stream(data.size(), batch, derive_seed(cfg.seed, 0xba7c));
  const long per_unit = cfg.schedule_unit == "epoch" ? static_cast<long>(stream.batches_per_epoch()) : 1;
  for (long unit = 0; unit < cfg.total; ++unit)
    for (long b = 0; b < per_unit; ++b) {
      std::vector<const CompositeSample*> samples;
      for (std::size_t i : stream.next()) samples.push_back(&data[i]);
      const double loss = trainer.step(samples, unit);
      log.losses.push_back(loss);
      if (on_step) on_step(static_cast<long>(log.losses.size()) - 1, loss);
    }
  return log;
}

}  // namespace

SpdInference run_spd(const SpdNetwork& spd, const Tensor& images) {
  NoGradGuard guard;
  SpdOutput out = spd.forward(constant(images));
  SpdInference r;
  r.mask = out.mask.value();
  r.mask_full = ops::resize_bilinear(out.mask, images.dim(2), images.dim(3)).value();
  for (int i = 0; i < 3; ++i) r.pyramid[i] = out.pyramid.stages[i].value();
  return r;
}

FeaturePyramid as_constants(const std::array<Tensor, 3>& pyramid) {
  FeaturePyramid p;
  for (int i = 0; i < 3; ++i) p.stages[i] = constant(pyramid[i]);
  return p;
}

SpdTrainer::SpdTrainer(SpdNetwork& net, TrainConfig cfg) : net_(net), cfg_(std::move(cfg)) {
  cfg_.validate();
  opt_ = make_optimizer(cfg_, {ParamGroup{net_.params().vars()}});
}

double SpdTrainer::step(const std::vector<const CompositeSample*>& batch, long unit) {
  for (const auto* s : batch)
    if (s->saliency_target.downsample != net_.config().mask_downsample)
      throw Error("SPD training: saliency targets downsampled by " + std::to_string(s->saliency_target.downsample) +
                  ", network predicts at 1/" + std::to_string(net_.config().mask_downsample));
  opt_->zero_grad();
  SpdOutput out = net_.forward(constant(stack_batch_images(batch)));
  Var loss = spd_loss(out.mask, constant(stack_saliency(batch)));
  const double value = loss.value()[0];
  backward(loss);
  opt_->step(lr_at(unit, cfg_));
  ++steps_;
  return value;
}

SpgmTrainer::SpgmTrainer(SpgmNetwork& net, const SpdNetwork& spd, TrainConfig cfg)
    : net_(net), spd_(spd), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.loss_weights.size() != 3) throw Error("SPGM training needs three loss weights");
  opt_ = make_optimizer(cfg_, {ParamGroup{net_.params().vars()}});
}

const SpdInference& SpgmTrainer::guidance(const CompositeSample* sample) {
  auto it = cache_.find(sample);
  if (it == cache_.end()) it = cache_.emplace(sample, run_spd(spd_, sample->image.to_tensor())).first;
  return it->second;
}

double SpgmTrainer::step(const std::vector<const CompositeSample*>& batch, long unit) {
  std::vector<const Tensor*> masks;
  std::array<std::vector<const Tensor*>, 3> stages;
  for (const auto* s : batch) {
    const auto& g = guidance(s);
    masks.push_back(&g.mask_full);
    for (int i = 0; i < 3; ++i) stages[i].push_back(&g.pyramid[i]);
  }
  std::array<Tensor, 3> pyramid;
  for (int i = 0; i < 3; ++i) pyramid[i] = concat_tensors(stages[i]);
  const FeaturePyramid guid = as_constants(pyramid);

  opt_->zero_grad();
  MattingOutput out = net_.forward(constant(stack_batch_images(batch)), constant(concat_tensors(masks)),
                                   net_.config().variant == SpgmVariant::kNoTst ? nullptr : &guid);
  Var loss = spgm_loss(out, constant(stack_batch_alphas(batch)), cfg_.loss_weights);
  const double value = loss.value()[0];
  backward(loss);
  opt_->step(lr_at(unit, cfg_));
  ++steps_;
  return value;
}

TrainLog train_spd(SpdNetwork& net, const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                   const StepCallback& on_step) {
  SpdTrainer trainer(net, cfg);
  return run_schedule(trainer, data, cfg, on_step);
}

TrainLog train_spgm(SpgmNetwork& net, const SpdNetwork& spd, const std::vector<CompositeSample>& data,
                    const TrainConfig& cfg, const StepCallback& on_step) {
  SpgmTrainer trainer(net, spd, cfg);
  return run_schedule(trainer, data, cfg, on_step);
}

TrainLog train_captioner(Captioner& model, const std::vector<CaptionPair>& data, const TrainConfig& cfg,
                         const StepCallback& on_step) {
  cfg.validate();
  PretrainSchedule schedule;
  schedule.backbone_max_lr = cfg.initial_lr;
  schedule.decoder_max_lr = cfg.decoder_lr;
  schedule.momentum = cfg.momentum;
  schedule.weight_decay = cfg.weight_decay;
  schedule.warmup_steps = cfg.warmup;
  schedule.total_steps = cfg.total;
  CaptionTrainer trainer(model, schedule);
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(data.size()));
  BatchStream stream(data.size(), batch, derive_seed(cfg.seed, 0xca9));
  TrainLog log;
  for (long step = 0; step < cfg.total; ++step) {
    std::vector<CaptionPair> pairs;
    for (std::size_t i : stream.next()) pairs.push_back(data[i]);
    const double loss = trainer.train_bicaption(pairs).loss;
    log.losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return log;
}

std::vector<AlphaMatte> predict_alphas(const SpgmNetwork& net, const SpdNetwork& spd,
                                       const std::vector<CompositeSample>& data) {
  std::vector<AlphaMatte> out;
  for (const auto& s : data) {
    const Tensor image = s.image.to_tensor();
    const SpdInference g = run_spd(spd, image);
    const FeaturePyramid guid = as_constants(g.pyramid);
    NoGradGuard guard;
    MattingOutput m = net.forward(constant(image), constant(g.mask_full),
                                  net.config().variant == SpgmVariant::kNoTst ? nullptr : &guid);
    out.push_back(AlphaMatte::from_tensor(m.alphas.back().value()));
  }
  return out;
}

}  // namespace spgim
