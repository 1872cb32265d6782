#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "spgim/caption.hpp"
#include "spgim/config.hpp"
#include "spgim/optim.hpp"
#include "spgim/spd.hpp"
#include "spgim/spgm.hpp"
#include "spgim/synthesis.hpp"

namespace spgim {

/// Model shapes implied by a training config.
SpdConfig spd_config_for(const TrainConfig& cfg);
SpgmConfig spgm_config_for(const TrainConfig& cfg, const SpdConfig& spd);
CaptionerConfig captioner_config_for(const TrainConfig& cfg, int vocab_size);

/// Reads every manifest record (paths relative to the manifest's directory).
/// Samples whose size differs from `input_size` are resized and get a fresh
/// saliency target; pass 0 to keep native sizes.
std::vector<CompositeSample> load_training_set(const std::filesystem::path& manifest, int input_size,
                                               int saliency_downsample);
/// JSON-lines {image, caption}; images resized to `input_size` when non-zero.
std::vector<CaptionPair> load_caption_set(const std::filesystem::path& manifest, int input_size);

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, std::vector<ParamGroup> groups);

/// [N,1,H,W] stacks.
Tensor stack_alphas(const std::vector<AlphaMatte>& alphas);
Tensor stack_saliency(const std::vector<const CompositeSample*>& batch);

/// SPD outputs on one image with gradients off.
struct SpdInference {
  Tensor mask;       // [N,1,H/d,W/d]
  Tensor mask_full;  // [N,1,H,W], bilinear
  std::array<Tensor, 3> pyramid;
};
SpdInference run_spd(const SpdNetwork& spd, const Tensor& images);
FeaturePyramid as_constants(const std::array<Tensor, 3>& pyramid);

class SpdTrainer {
 public:
  SpdTrainer(SpdNetwork& net, TrainConfig cfg);
  /// One optimizer step at lr_at(unit) where unit is the current epoch or step.
  double step(const std::vector<const CompositeSample*>& batch, long unit);
  long steps() const { return steps_; }

 private:
  SpdNetwork& net_;
  TrainConfig cfg_;
  std::unique_ptr<Optimizer> opt_;
  long steps_ = 0;
};

/// Trains SPGM against a frozen SPD network. SPD outputs are cached per sample.
class SpgmTrainer {
 public:
  SpgmTrainer(SpgmNetwork& net, const SpdNetwork& spd, TrainConfig cfg);
  double step(const std::vector<const CompositeSample*>& batch, long unit);
  long steps() const { return steps_; }
  /// Frozen SPD result for a sample (computed on first use).
  const SpdInference& guidance(const CompositeSample* sample);

 private:
  SpgmNetwork& net_;
  const SpdNetwork& spd_;
  TrainConfig cfg_;
  std::unique_ptr<Optimizer> opt_;
  std::unordered_map<const CompositeSample*, SpdInference> cache_;
  long steps_ = 0;
};

struct TrainLog {
  std::vector<double> losses;  // one per optimizer step
};

using StepCallback = std::function<void(long step, double loss)>;

/// Runs cfg.total units. With schedule_unit "epoch" each unit is a shuffled
/// pass over `data`; with "step" each unit is one batch drawn from a shuffled
/// stream.
TrainLog train_spd(SpdNetwork& net, const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                   const StepCallback& on_step = {});
TrainLog train_spgm(SpgmNetwork& net, const SpdNetwork& spd, const std::vector<CompositeSample>& data,
                    const TrainConfig& cfg, const StepCallback& on_step = {});

TrainLog train_captioner(Captioner& model, const std::vector<CaptionPair>& data, const TrainConfig& cfg,
                         const StepCallback& on_step = {});

/// Full-resolution alpha predicted for each sample (inference, batch of one).
std::vector<AlphaMatte> predict_alphas(const SpgmNetwork& net, const SpdNetwork& spd,
                                       const std::vector<CompositeSample>& data);

}  // namespace spgim
