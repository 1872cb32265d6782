#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spgim/image.hpp"

namespace spgim {

struct ForegroundAsset {
  ImagePlane foreground;
  AlphaMatte alpha;
  std::string id;

  /// Throws unless alpha is in [0,1] and matches the foreground size.
  void validate() const;
};

/// I = a*F + (1-a)*B per pixel and channel. All three planes must share H x W.
ImagePlane compose(const ImagePlane& foreground, const AlphaMatte& alpha, const ImagePlane& background);
/// Resizes the background to cover the foreground (bilinear, centre crop) first.
ImagePlane compose(const ForegroundAsset& asset, const ImagePlane& background);

/// Normalized 1-D Gaussian taps, radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Maps an out-of-range index into [0, n) by half-sample symmetric reflection
/// (... c b a | a b c | c b a ...), repeating as needed.
int reflect_index(int i, int n);

/// Box average over d x d blocks; edge blocks average over the pixels they have.
AlphaMatte area_downsample(const AlphaMatte& a, int factor);
/// Separable Gaussian blur with symmetric reflective padding.
AlphaMatte gaussian_blur(const AlphaMatte& a, double sigma);

SaliencyTarget make_saliency_target(const AlphaMatte& alpha_gt, int downsample = 16, double blur_sigma = 1.0);

struct TrimapConfig {
  double threshold_lo = 0.0;
  double threshold_hi = 1.0;
  int radius_min = 1;
  int radius_max = 15;
};

struct TrimapResult {
  TrimapPlane trimap;
  int radius = 0;
  bool all_unknown = false;
};

/// Disk dilation of a binary mask: every pixel within Euclidean distance
/// `radius` of a set pixel becomes set.
std::vector<std::uint8_t> dilate_disk(const std::vector<std::uint8_t>& mask, int height, int width, int radius);

/// Thresholds alpha into fg/bg/unknown and dilates the unknown band by a radius
/// drawn uniformly from [radius_min, radius_max] with `rng_seed`.
TrimapResult make_trimap(const AlphaMatte& alpha_gt, const TrimapConfig& cfg, std::uint64_t rng_seed);

enum class Split { kTrain, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);
/// Composition ratio used for the split when none is given (100 train, 20 test).
int default_ratio(Split s);

struct ManifestRecord {
  std::string image;
  std::string alpha;
  std::string trimap;
  std::string saliency;
  std::string fg_id;
  std::string bg_id;
  std::uint64_t seed = 0;
  std::vector<std::string> flags;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  Split split = Split::kTrain;
  int composition_ratio = 100;
  std::vector<std::string> warnings;

  /// One JSON object per line with exactly the record fields.
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

/// Plans `ratio` backgrounds per foreground: without replacement inside one
/// foreground, independently across foregrounds. Deterministic in `seed`.
DatasetManifest build_manifest(std::span<const std::string> foreground_ids, std::span<const std::string> background_ids,
                               int ratio, Split split, std::uint64_t seed);

struct CompositeSample {
  ImagePlane image;
  AlphaMatte alpha_gt;
  TrimapPlane trimap;
  SaliencyTarget saliency_target;
  std::string foreground_id;
  std::string background_id;
  std::uint64_t seed = 0;
  std::vector<std::string> flags;
};

struct SynthesisConfig {
  TrimapConfig trimap;
  int saliency_downsample = 16;
  double saliency_sigma = 1.0;
};

CompositeSample render_sample(const ForegroundAsset& fg, const ImagePlane& background, const std::string& background_id,
                              std::uint64_t seed, const SynthesisConfig& cfg = {});

}  // namespace spgim
