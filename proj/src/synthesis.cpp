#include "spgim/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "spgim/rng.hpp"

namespace spgim {

void ForegroundAsset::validate() const {
  if (!foreground.same_size(alpha))
    throw Error("foreground '" + id + "': image " + std::to_string(foreground.height()) + "x" +
                std::to_string(foreground.width()) + " vs alpha " + std::to_string(alpha.height()) + "x" +
                std::to_string(alpha.width()));
  require_unit_range(alpha, ("foreground '" + id + "'").c_str());
}

ImagePlane compose(const ImagePlane& foreground, const AlphaMatte& alpha, const ImagePlane& background) {
  if (!foreground.same_size(alpha) || !foreground.same_size(background))
    throw Error("compose: size mismatch F " + std::to_string(foreground.height()) + "x" +
                std::to_string(foreground.width()) + ", alpha " + std::to_string(alpha.height()) + "x" +
                std::to_string(alpha.width()) + ", B " + std::to_string(background.height()) + "x" +
                std::to_string(background.width()));
  ImagePlane out(foreground.height(), foreground.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const double a = alpha.at(y, x);
        out.at(c, y, x) = a * foreground.at(c, y, x) + (1.0 - a) * background.at(c, y, x);
      }
  return out;
}

ImagePlane compose(const ForegroundAsset& asset, const ImagePlane& background) {
  asset.validate();
  if (background.empty()) throw Error("compose: empty background");
  ImagePlane bg = background.same_size(asset.foreground)
                      ? background
                      : resize_cover_crop(background, asset.foreground.height(), asset.foreground.width());
  return compose(asset.foreground, asset.alpha, bg);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= s;
  return k;
}

int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

AlphaMatte area_downsample(const AlphaMatte& a, int factor) {
  if (factor < 1) throw Error("area_downsample: factor must be >= 1");
  const int oh = (a.height() + factor - 1) / factor;
  const int ow = (a.width() + factor - 1) / factor;
  AlphaMatte out(oh, ow);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double s = 0.0;
      int n = 0;
      for (int y = oy * factor; y < std::min(a.height(), (oy + 1) * factor); ++y)
        for (int x = ox * factor; x < std::min(a.width(), (ox + 1) * factor); ++x, ++n) s += a.at(y, x);
      out.at(oy, ox) = s / n;
    }
  return out;
}

AlphaMatte gaussian_blur(const AlphaMatte& a, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int h = a.height(), w = a.width();
  AlphaMatte tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * a.at(y, reflect_index(x + i, w));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.at(reflect_index(y + i, h), x);
      out.at(y, x) = s;
    }
  return out;
}

SaliencyTarget make_saliency_target(const AlphaMatte& alpha_gt, int downsample, double blur_sigma) {
  if (downsample < 1) throw Error("make_saliency_target: downsample must be >= 1");
  if (!(blur_sigma > 0.0)) throw Error("make_saliency_target: blur sigma must be positive");
  require_unit_range(alpha_gt, "make_saliency_target");
  AlphaMatte blurred = gaussian_blur(area_downsample(alpha_gt, downsample), blur_sigma);
  for (double& v : blurred.data()) v = std::clamp(v, 0.0, 1.0);
  return {std::move(blurred), downsample};
}

namespace {

// Squared 1-D distance transform of a sampled function (lower envelope of parabolas).
void distance_transform_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = double(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace

std::vector<std::uint8_t> dilate_disk(const std::vector<std::uint8_t>& mask, int height, int width, int radius) {
  if (radius < 0) throw Error("dilate_disk: negative radius");
  if (mask.size() != static_cast<std::size_t>(height) * width) throw Error("dilate_disk: mask size mismatch");
  if (radius == 0) return mask;
  // Large finite value keeps the parabola arithmetic well defined.
  const double far = 1e18;
  std::vector<double> dist(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) dist[i] = mask[i] ? 0.0 : far;
  std::vector<double> f, d;
  f.resize(static_cast<std::size_t>(height));
  d.resize(static_cast<std::size_t>(height));
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>(y) * width + x];
    distance_transform_1d(f, d);
    for (int y = 0; y < height; ++y) dist[static_cast<std::size_t>(y) * width + x] = d[static_cast<std::size_t>(y)];
  }
  f.resize(static_cast<std::size_t>(width));
  d.resize(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    std::copy_n(dist.begin() + static_cast<long>(y) * width, width, f.begin());
    distance_transform_1d(f, d);
    std::copy(d.begin(), d.end(), dist.begin() + static_cast<long>(y) * width);
  }
  std::vector<std::uint8_t> out(mask.size());
  const double r2 = static_cast<double>(radius) * radius;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dist[i] <= r2 ? 1 : 0;
  return out;
}

TrimapResult make_trimap(const AlphaMatte& alpha_gt, const TrimapConfig& cfg, std::uint64_t rng_seed) {
  if (!(cfg.threshold_lo >= 0.0 && cfg.threshold_lo < cfg.threshold_hi && cfg.threshold_hi <= 1.0))
    throw Error("make_trimap: need 0 <= lo < hi <= 1");
  if (cfg.radius_min < 0 || cfg.radius_max < cfg.radius_min) throw Error("make_trimap: bad dilation radius range");
  require_unit_range(alpha_gt, "make_trimap");
  const int h = alpha_gt.height(), w = alpha_gt.width();
  Rng rng(rng_seed);
  TrimapResult res;
  res.radius = rng.uniform_int(cfg.radius_min, cfg.radius_max);
  res.trimap = TrimapPlane(h, w, TrimapLabel::kBackground);
  std::vector<std::uint8_t> unknown(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = alpha_gt.at(y, x);
      if (a <= cfg.threshold_lo) continue;
      if (a >= cfg.threshold_hi)
        res.trimap.at(y, x) = static_cast<std::uint8_t>(TrimapLabel::kForeground);
      else
        unknown[static_cast<std::size_t>(y) * w + x] = 1;
    }
  unknown = dilate_disk(unknown, h, w, res.radius);
  for (std::size_t i = 0; i < unknown.size(); ++i)
    if (unknown[i]) res.trimap.labels[i] = static_cast<std::uint8_t>(TrimapLabel::kUnknown);
  res.all_unknown = !unknown.empty() && res.trimap.count(TrimapLabel::kUnknown) == unknown.size();
  return res;
}

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw Error("split must be 'train' or 'test', got '" + s + "'");
}

int default_ratio(Split s) { return s == Split::kTrain ? 100 : 20; }

namespace {

nlohmann::ordered_json record_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["image"] = r.image;
  j["alpha"] = r.alpha;
  j["trimap"] = r.trimap;
  j["saliency"] = r.saliency;
  j["fg_id"] = r.fg_id;
  j["bg_id"] = r.bg_id;
  j["seed"] = r.seed;
  j["flags"] = r.flags;
  return j;
}

}  // namespace

std::string DatasetManifest::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

void DatasetManifest::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write manifest " + path.string());
  os << to_jsonl();
}

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read manifest " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.image = j.at("image").get<std::string>();
      r.alpha = j.value("alpha", "");
      r.trimap = j.value("trimap", "");
      r.saliency = j.value("saliency", "");
      r.fg_id = j.value("fg_id", "");
      r.bg_id = j.value("bg_id", "");
      r.seed = j.value("seed", std::uint64_t{0});
      r.flags = j.value("flags", std::vector<std::string>{});
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

DatasetManifest build_manifest(std::span<const std::string> foreground_ids, std::span<const std::string> background_ids,
                               int ratio, Split split, std::uint64_t seed) {
  if (ratio < 1) throw Error("build_manifest: ratio must be >= 1");
  if (background_ids.empty()) throw Error("build_manifest: background pool is empty");
  DatasetManifest m;
  m.split = split;
  m.composition_ratio = ratio;
  const bool with_replacement = background_ids.size() < static_cast<std::size_t>(ratio);
  if (with_replacement)
    m.warnings.push_back("background pool (" + std::to_string(background_ids.size()) + ") smaller than ratio (" +
                         std::to_string(ratio) + "); sampling with replacement");
  m.records.reserve(foreground_ids.size() * static_cast<std::size_t>(ratio));
  std::vector<std::size_t> pool(background_ids.size());
  const std::string split_name = to_string(split);
  for (std::size_t fi = 0; fi < foreground_ids.size(); ++fi) {
    Rng rng(derive_seed(seed, fi));
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int k = 0; k < ratio; ++k) {
      std::size_t pick;
      if (with_replacement) {
        pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
      } else {
        // partial Fisher-Yates
        const auto j = static_cast<std::size_t>(rng.uniform_int(k, static_cast<int>(pool.size()) - 1));
        std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
        pick = pool[static_cast<std::size_t>(k)];
      }
      ManifestRecord r;
      const std::string stem = split_name + "_" + foreground_ids[fi] + "_" + std::to_string(k);
      r.image = "image/" + stem + ".png";
      r.alpha = "alpha/" + stem + ".png";
      r.trimap = "trimap/" + stem + ".png";
      r.saliency = "saliency/" + stem + ".png";
      r.fg_id = foreground_ids[fi];
      r.bg_id = background_ids[pick];
      r.seed = derive_seed(seed, fi * static_cast<std::uint64_t>(ratio) + static_cast<std::uint64_t>(k) + 0x5a17);
      if (with_replacement) r.flags.emplace_back("bg_with_replacement");
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

CompositeSample render_sample(const ForegroundAsset& fg, const ImagePlane& background, const std::string& background_id,
                              std::uint64_t seed, const SynthesisConfig& cfg) {
  CompositeSample s;
  s.image = compose(fg, background);
  s.alpha_gt = fg.alpha;
  TrimapResult tri = make_trimap(fg.alpha, cfg.trimap, seed);
  s.trimap = std::move(tri.trimap);
  s.saliency_target = make_saliency_target(fg.alpha, cfg.saliency_downsample, cfg.saliency_sigma);
  s.foreground_id = fg.id;
  s.background_id = background_id;
  s.seed = seed;
  if (tri.all_unknown) s.flags.emplace_back("all_unknown");
  if (std::all_of(fg.alpha.data().begin(), fg.alpha.data().end(), [](double v) { return v == 0.0; }))
    s.flags.emplace_back("empty_alpha");
  return s;
}

}  // namespace spgim
