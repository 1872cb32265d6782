#include "spgim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spgim::synthetic {

const std::vector<PaletteEntry>& palette() {
  static const std::vector<PaletteEntry> p = {
      {"red", {0.85, 0.15, 0.12}},  {"green", {0.15, 0.7, 0.25}},  {"blue", {0.15, 0.3, 0.85}},
      {"yellow", {0.92, 0.85, 0.2}}, {"purple", {0.55, 0.2, 0.7}}, {"orange", {0.95, 0.55, 0.1}},
      {"white", {0.95, 0.95, 0.95}}, {"black", {0.08, 0.08, 0.1}},
  };
  return p;
}

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::kDisk: return "disk";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kRing: return "ring";
    case ShapeKind::kStar: return "star";
  }
  return "disk";
}

std::string to_string(Pattern p) {
  switch (p) {
    case Pattern::kPlain: return "plain";
    case Pattern::kStripes: return "striped";
    case Pattern::kChecker: return "checkered";
    case Pattern::kGradient: return "shaded";
    case Pattern::kNoise: return "noisy";
  }
  return "plain";
}

SceneSpec random_scene(Rng& rng) {
  SceneSpec s;
  const int colors = static_cast<int>(palette().size());
  s.shape = static_cast<ShapeKind>(rng.uniform_int(0, 4));
  s.color = rng.uniform_int(0, colors - 1);
  s.furry = rng.uniform() < 0.35;
  s.pattern = static_cast<Pattern>(rng.uniform_int(0, 4));
  s.background_color = rng.uniform_int(0, colors - 2);
  if (s.background_color >= s.color) ++s.background_color;
  return s;
}

std::string describe(const SceneSpec& spec) {
  std::string text = "a ";
  if (spec.furry) text += "furry ";
  text += palette()[spec.color].name;
  text += " " + to_string(spec.shape) + " on a ";
  text += palette()[spec.background_color].name;
  text += " " + to_string(spec.pattern) + " background .";
  return text;
}

namespace {

struct Geometry {
  double cx, cy, r, angle;
};

/// Signed distance in pixels (negative inside).
double shape_distance(ShapeKind kind, const Geometry& g, double x, double y) {
  const double dx = x - g.cx, dy = y - g.cy;
  const double c = std::cos(g.angle), s = std::sin(g.angle);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  const double rho = std::hypot(dx, dy);
  switch (kind) {
    case ShapeKind::kDisk: return rho - g.r;
    case ShapeKind::kSquare: {
      const double h = g.r * 0.85;
      const double qx = std::abs(u) - h, qy = std::abs(v) - h;
      return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
    }
    case ShapeKind::kTriangle: {
      double d = -1e9;
      for (int k = 0; k < 3; ++k) {
        const double a = g.angle + k * 2.0 * std::numbers::pi / 3.0;
        d = std::max(d, dx * std::cos(a) + dy * std::sin(a) - 0.55 * g.r);
      }
      return d;
    }
    case ShapeKind::kRing: return std::abs(rho - 0.75 * g.r) - 0.3 * g.r;
    case ShapeKind::kStar: {
      const double theta = std::atan2(v, u);
      return rho - g.r * (0.7 + 0.3 * std::cos(5.0 * theta));
    }
  }
  return rho - g.r;
}

/// Alpha of a 1-pixel-wide segment with soft falloff.
double segment_alpha(double x, double y, double x0, double y0, double x1, double y1, double strength) {
  const double vx = x1 - x0, vy = y1 - y0;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp(((x - x0) * vx + (y - y0) * vy) / len2, 0.0, 1.0) : 0.0;
  const double d = std::hypot(x - (x0 + t * vx), y - (y0 + t * vy));
  return strength * std::clamp(1.0 - d, 0.0, 1.0);
}

}  // namespace

ForegroundAsset make_foreground(const SceneSpec& spec, int size, std::uint64_t seed, const std::string& id) {
  if (size < 8) throw Error("synthetic foreground size must be >= 8");
  Rng rng(seed);
  Geometry g;
  g.r = size * rng.uniform(0.22, 0.34);
  g.cx = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
  g.cy = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
  g.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double softness = rng.uniform(0.6, 2.5);

  ForegroundAsset fg;
  fg.id = id;
  fg.alpha = AlphaMatte(size, size);
  fg.foreground = ImagePlane(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d = shape_distance(spec.shape, g, x + 0.5, y + 0.5);
      fg.alpha.at(y, x) = std::clamp(0.5 - d / softness, 0.0, 1.0);
    }

  if (spec.furry) {
    const int strands = rng.uniform_int(24, 48);
    for (int k = 0; k < strands; ++k) {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      // walk outward from the centre until leaving the shape
      double r0 = 0.0;
      while (r0 < size && shape_distance(spec.shape, g, g.cx + r0 * std::cos(a), g.cy + r0 * std::sin(a)) < 0) r0 += 0.5;
      const double len = rng.uniform(3.0, 8.0);
      const double bend = rng.uniform(-0.4, 0.4);
      const double x0 = g.cx + (r0 - 1.0) * std::cos(a), y0 = g.cy + (r0 - 1.0) * std::sin(a);
      const double x1 = x0 + len * std::cos(a + bend), y1 = y0 + len * std::sin(a + bend);
      const double strength = rng.uniform(0.35, 0.8);
      const int xa = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - 2)));
      const int xb = std::min(size - 1, static_cast<int>(std::ceil(std::max(x0, x1) + 2)));
      const int ya = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - 2)));
      const int yb = std::min(size - 1, static_cast<int>(std::ceil(std::max(y0, y1) + 2)));
      for (int y = ya; y <= yb; ++y)
        for (int x = xa; x <= xb; ++x)
          fg.alpha.at(y, x) = std::max(fg.alpha.at(y, x), segment_alpha(x + 0.5, y + 0.5, x0, y0, x1, y1, strength));
    }
  }

  const auto& base = palette()[spec.color].rgb;
  const double shade_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double shade = 0.12 * ((x - g.cx) * std::cos(shade_dir) + (y - g.cy) * std::sin(shade_dir)) / size;
      const double grain = rng.uniform(-0.04, 0.04);
      for (int c = 0; c < 3; ++c) fg.foreground.at(c, y, x) = std::clamp(base[c] + shade + grain, 0.0, 1.0);
    }
  return fg;
}

ImagePlane make_background(const SceneSpec& spec, int size, std::uint64_t seed) {
  Rng rng(seed);
  const auto& base = palette()[spec.background_color].rgb;
  double alt[3];
  const double lift = base[0] + base[1] + base[2] > 1.5 ? -0.35 : 0.35;
  for (int c = 0; c < 3; ++c) alt[c] = std::clamp(base[c] + lift, 0.0, 1.0);

  ImagePlane bg(size, size);
  const double period = rng.uniform(5.0, 11.0);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  // coarse value noise for the noisy pattern
  const int cells = 6;
  std::vector<double> lattice((cells + 1) * (cells + 1));
  for (double& v : lattice) v = rng.uniform();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double t = 0.0;
      switch (spec.pattern) {
        case Pattern::kPlain: t = 0.0; break;
        case Pattern::kStripes: t = std::fmod(std::abs(x * ca + y * sa), period) < period / 2 ? 1.0 : 0.0; break;
        case Pattern::kChecker:
          t = ((static_cast<int>(x / (period * 0.8)) + static_cast<int>(y / (period * 0.8))) % 2) ? 1.0 : 0.0;
          break;
        case Pattern::kGradient: t = std::clamp(((x - size / 2.0) * ca + (y - size / 2.0) * sa) / size + 0.5, 0.0, 1.0); break;
        case Pattern::kNoise: {
          const double gx = static_cast<double>(x) / size * cells, gy = static_cast<double>(y) / size * cells;
          const int ix = std::min(static_cast<int>(gx), cells - 1), iy = std::min(static_cast<int>(gy), cells - 1);
          const double fx = gx - ix, fy = gy - iy;
          const auto L = [&](int i, int j) { return lattice[j * (cells + 1) + i]; };
          t = (1 - fx) * (1 - fy) * L(ix, iy) + fx * (1 - fy) * L(ix + 1, iy) + (1 - fx) * fy * L(ix, iy + 1) +
              fx * fy * L(ix + 1, iy + 1);
          break;
        }
      }
      const double grain = rng.uniform(-0.03, 0.03);
      for (int c = 0; c < 3; ++c) bg.at(c, y, x) = std::clamp((1 - t) * base[c] + t * alt[c] + grain, 0.0, 1.0);
    }
  return bg;
}

std::vector<ForegroundAsset> make_foregrounds(int count, int size, std::uint64_t seed) {
  std::vector<ForegroundAsset> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 2 * i));
    const SceneSpec spec = random_scene(rng);
    out.push_back(make_foreground(spec, size, rng.next_seed(), "fg" + std::to_string(i)));
  }
  return out;
}

std::vector<ImagePlane> make_backgrounds(int count, int size, std::uint64_t seed) {
  std::vector<ImagePlane> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 2 * i + 1));
    const SceneSpec spec = random_scene(rng);
    out.push_back(make_background(spec, size, rng.next_seed()));
  }
  return out;
}

std::vector<CompositeSample> make_composites(int count, int size, std::uint64_t seed, const SynthesisConfig& cfg) {
  std::vector<CompositeSample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const SceneSpec spec = random_scene(rng);
    const auto fg = make_foreground(spec, size, rng.next_seed(), "fg" + std::to_string(i));
    const auto bg = make_background(spec, size, rng.next_seed());
    out.push_back(render_sample(fg, bg, "bg" + std::to_string(i), rng.next_seed(), cfg));
  }
  return out;
}

std::vector<CaptionPair> make_caption_corpus(int count, int size, std::uint64_t seed) {
  std::vector<CaptionPair> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const SceneSpec spec = random_scene(rng);
    const auto fg = make_foreground(spec, size, rng.next_seed(), "cap" + std::to_string(i));
    const auto bg = make_background(spec, size, rng.next_seed());
    out.push_back({compose(fg.foreground, fg.alpha, bg), describe(spec)});
  }
  return out;
}

}  // namespace spgim::synthetic
