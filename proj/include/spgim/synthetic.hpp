#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spgim/caption.hpp"
#include "spgim/synthesis.hpp"

namespace spgim::synthetic {

// Procedural stand-ins for the foreground / background / caption corpora,
// sized for CPU runs.

enum class ShapeKind { kDisk, kSquare, kTriangle, kRing, kStar };
enum class Pattern { kPlain, kStripes, kChecker, kGradient, kNoise };

struct SceneSpec {
  ShapeKind shape = ShapeKind::kDisk;
  int color = 0;  // index into palette()
  bool furry = false;
  Pattern pattern = Pattern::kPlain;
  int background_color = 1;
};

struct PaletteEntry {
  const char* name;
  double rgb[3];
};
const std::vector<PaletteEntry>& palette();
std::string to_string(ShapeKind s);
std::string to_string(Pattern p);

SceneSpec random_scene(Rng& rng);
/// Foreground colour plane + soft alpha of `spec`'s shape.
ForegroundAsset make_foreground(const SceneSpec& spec, int size, std::uint64_t seed, const std::string& id);
ImagePlane make_background(const SceneSpec& spec, int size, std::uint64_t seed);
/// e.g. "a furry red disk on a blue striped background ."
std::string describe(const SceneSpec& spec);

std::vector<ForegroundAsset> make_foregrounds(int count, int size, std::uint64_t seed);
std::vector<ImagePlane> make_backgrounds(int count, int size, std::uint64_t seed);

/// `count` composites, each with its own foreground and background.
std::vector<CompositeSample> make_composites(int count, int size, std::uint64_t seed,
                                             const SynthesisConfig& cfg = {});

std::vector<CaptionPair> make_caption_corpus(int count, int size, std::uint64_t seed);

}  // namespace spgim::synthetic
