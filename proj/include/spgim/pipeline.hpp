#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spgim/checkpoint.hpp"
#include "spgim/image.hpp"

namespace spgim {

/// Edge-replicates the bottom and right borders up to the next multiple.
template <int C>
Raster<C> pad_replicate(const Raster<C>& src, int multiple);
/// Top-left `height` x `width` window.
template <int C>
Raster<C> crop(const Raster<C>& src, int height, int width);

struct PipelineResult {
  AlphaMatte alpha;      // input resolution
  AlphaMatte mask;       // SPD output at 1/d of the padded input, cropped
  AlphaMatte mask_full;  // SPD output upsampled to input resolution
  std::array<AlphaMatte, 3> level_alphas;  // strides 8, 4, 1
  /// Per TST stage, one [HW_matt, HW_guid] matrix per sample (when requested).
  std::array<std::vector<Tensor>, 3> attention;
};

/// SPD followed by SPGM on single images of any size.
class Pipeline {
 public:
  Pipeline(SpdNetwork spd, SpgmNetwork spgm);
  /// Rejects checkpoints that do not fit together, naming the fields.
  static Pipeline from_checkpoints(const Checkpoint& spd, const Checkpoint& spgm);
  static Pipeline load(const std::filesystem::path& spd, const std::filesystem::path& spgm);

  PipelineResult run(const ImagePlane& image, bool keep_attention = false) const;

  const SpdNetwork& spd() const { return spd_; }
  const SpgmNetwork& spgm() const { return spgm_; }

 private:
  SpdNetwork spd_;
  SpgmNetwork spgm_;
};

/// Writes <stem>_alpha, _mask, _mask_full and _level{1,2,3} PNGs. Returns
/// the paths written.
std::vector<std::filesystem::path> write_intermediates(const std::filesystem::path& dir, const std::string& stem,
                                                       const PipelineResult& result, int bit_depth = 8);
/// <stem>_attention_stage{k}.json for each stage that has maps.
std::vector<std::filesystem::path> write_attention(const std::filesystem::path& dir, const std::string& stem,
                                                   const PipelineResult& result);

struct ComparisonLayout {
  int cell = 128;
  std::array<double, 3> background{0.0, 0.6, 0.2};  // cutout backdrop
  bool labels = true;
};

struct MethodAlphas {
  std::string name;
  std::map<std::string, AlphaMatte> alphas;  // by image id
};

/// One row: input | each method's alpha | first available alpha composited
/// over a solid backdrop. Missing entries become labelled blank cells. The
/// sheet is exactly cell x (methods + 2) cells.
ImagePlane comparison_sheet(const ImagePlane& image, const std::string& image_id,
                            const std::vector<MethodAlphas>& methods, const ComparisonLayout& layout = {});

/// One PNG per image id in `out_dir`; returns the paths in input order.
std::vector<std::filesystem::path> emit_comparison(const std::vector<std::pair<std::string, ImagePlane>>& images,
                                                   const std::vector<MethodAlphas>& methods,
                                                   const std::filesystem::path& out_dir,
                                                   const ComparisonLayout& layout = {});

}  // namespace spgim
