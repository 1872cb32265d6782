#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spgim {

enum class Branch { kSpd, kSpgm, kCaption };
enum class OptimizerKind { kAdam, kSgd };
std::string to_string(Branch b);
std::string to_string(OptimizerKind o);
Branch parse_branch(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

/// Flat `key = value` document: `#` comments, quoted strings, numbers, booleans
/// and `[a, b]` arrays. Values keep their source text.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text);
  static KeyValueDoc load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long> get_longs(const std::string& key) const;
  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::string> values_;
};

struct TrainConfig {
  Branch branch = Branch::kSpd;
  std::string profile = "composition1k";
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double initial_lr = 1e-2;
  /// Epoch (or step, when schedule_unit is "step") indices where the lr decays.
  std::vector<long> milestones{20, 40};
  double decay_factor = 0.1;
  std::string schedule_unit = "epoch";
  long total = 50;
  int batch_size = 16;
  int input_size = 512;
  std::vector<double> loss_weights;
  std::uint64_t seed = 0;

  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  /// Caption branch only: decoder-side peak lr and warmup length (steps).
  double decoder_lr = 1e-3;
  long warmup = 0;

  // model shape
  double width_multiplier = 1.0;
  std::vector<long> backbone_blocks{3, 4, 6, 3};
  std::string variant = "full";

  void validate() const;
  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);

  /// Named presets: composition1k, distinction646, human2k, multiobject1k, desk.
  static TrainConfig preset(Branch branch, const std::string& profile = "composition1k");
  static std::vector<std::string> profile_names();
};

/// initial_lr * decay_factor^(number of milestones <= step_or_epoch)
double lr_at(long step_or_epoch, const TrainConfig& cfg);

/// Scratch directory: $SPGIM_CACHE_DIR, else <tmp>/spgim-cache.
std::filesystem::path cache_dir();

}  // namespace spgim
