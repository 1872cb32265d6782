#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "spgim/checkpoint.hpp"
#include "spgim/synthesis.hpp"
#include "spgim/synthetic.hpp"
#include "support.hpp"

namespace spgim {
namespace {

using testing::random_image;
using testing::random_matte;

ImagePlane quantized(ImagePlane p) {
  for (double& v : p.data()) v = quantize8(v);
  return p;
}

TEST(Compose, MatchesBlendAfter8BitRoundTrip) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const ImagePlane f = quantized(random_image(16, 16, rng));
    const ImagePlane b = quantized(random_image(16, 16, rng));
    AlphaMatte a = random_matte(16, 16, rng);
    for (double& v : a.data()) v = quantize8(v);
    const ImagePlane img = quantized(compose(f, a, b));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double want = a.at(y, x) * f.at(c, y, x) + (1 - a.at(y, x)) * b.at(c, y, x);
          ASSERT_LE(std::abs(img.at(c, y, x) - want), 1.0 / 255 + 1e-12);
        }
  }
}

TEST(Compose, PngRoundTripStaysWithinOneLevel) {
  Rng rng(2);
  const ImagePlane f = random_image(16, 16, rng), b = random_image(16, 16, rng);
  const AlphaMatte a = random_matte(16, 16, rng);
  const auto dir = std::filesystem::temp_directory_path() / "spgim_compose_test";
  std::filesystem::create_directories(dir);
  write_image(dir / "f.png", f);
  write_image(dir / "b.png", b);
  write_alpha(dir / "a.png", a);
  const ImagePlane f8 = read_image(dir / "f.png"), b8 = read_image(dir / "b.png");
  const AlphaMatte a8 = read_alpha(dir / "a.png");
  write_image(dir / "i.png", compose(f8, a8, b8));
  const ImagePlane i8 = read_image(dir / "i.png");
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        EXPECT_LE(std::abs(i8.at(c, y, x) - (a8.at(y, x) * f8.at(c, y, x) + (1 - a8.at(y, x)) * b8.at(c, y, x))),
                  1.0 / 255 + 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Compose, AlphaExtremesSelectOneLayer) {
  Rng rng(3);
  const ImagePlane f = random_image(4, 4, rng), b = random_image(4, 4, rng);
  EXPECT_EQ(compose(f, AlphaMatte(4, 4, 1.0), b), f);
  EXPECT_EQ(compose(f, AlphaMatte(4, 4, 0.0), b), b);
}

TEST(Compose, RejectsSizeMismatch) {
  EXPECT_THROW(compose(ImagePlane(4, 4), AlphaMatte(4, 5), ImagePlane(4, 4)), Error);
}

TEST(Compose, ResizesBackgroundToCover) {
  Rng rng(4);
  ForegroundAsset fg{random_image(8, 12, rng), random_matte(8, 12, rng), "fg"};
  const ImagePlane img = compose(fg, random_image(20, 20, rng));
  EXPECT_TRUE(img.same_size(8, 12));
}

std::vector<std::string> ids(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

TEST(Manifest, RatioTimesForegroundsRecords) {
  const auto fg = ids("fg", 431), bg = ids("bg", 150);
  const auto m = build_manifest(fg, bg, 100, Split::kTrain, 9);
  EXPECT_EQ(m.records.size(), 43100u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Manifest, DeterministicUnderSeed) {
  const auto fg = ids("fg", 20), bg = ids("bg", 30);
  const std::string a = build_manifest(fg, bg, 10, Split::kTrain, 5).to_jsonl();
  const std::string b = build_manifest(fg, bg, 10, Split::kTrain, 5).to_jsonl();
  const std::string c = build_manifest(fg, bg, 10, Split::kTrain, 6).to_jsonl();
  EXPECT_EQ(sha256_hex(a.data(), a.size()), sha256_hex(b.data(), b.size()));
  EXPECT_NE(a, c);
}

TEST(Manifest, NoRepeatedBackgroundWithinForeground) {
  const auto fg = ids("fg", 5), bg = ids("bg", 12);
  const auto m = build_manifest(fg, bg, 12, Split::kTest, 1);
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& r : m.records) EXPECT_TRUE(seen[r.fg_id].insert(r.bg_id).second);
  for (const auto& [id, set] : seen) EXPECT_EQ(set.size(), 12u);
}

TEST(Manifest, SmallPoolSamplesWithReplacementAndFlags) {
  const auto m = build_manifest(ids("fg", 2), ids("bg", 3), 5, Split::kTrain, 1);
  EXPECT_EQ(m.records.size(), 10u);
  ASSERT_EQ(m.warnings.size(), 1u);
  for (const auto& r : m.records) EXPECT_EQ(r.flags, std::vector<std::string>{"bg_with_replacement"});
}

TEST(Manifest, JsonlRoundTrip) {
  const auto m = build_manifest(ids("fg", 3), ids("bg", 4), 2, Split::kTrain, 1);
  const auto path = std::filesystem::temp_directory_path() / "spgim_manifest_test.jsonl";
  m.write(path);
  EXPECT_EQ(DatasetManifest::read(path).records, m.records);
  std::filesystem::remove(path);
}

TEST(Manifest, DefaultRatios) {
  EXPECT_EQ(default_ratio(Split::kTrain), 100);
  EXPECT_EQ(default_ratio(Split::kTest), 20);
  EXPECT_THROW(parse_split("val"), Error);
}

/// Brute-force disk dilation.
std::vector<std::uint8_t> dilate_loop(const std::vector<std::uint8_t>& m, int h, int w, int r) {
  std::vector<std::uint8_t> out(m.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
          if (m[yy * w + xx] && (y - yy) * (y - yy) + (x - xx) * (x - xx) <= r * r) out[y * w + x] = 1;
  return out;
}

TEST(Trimap, DiskDilationMatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = rng.uniform_int(1, 14), w = rng.uniform_int(1, 14), r = rng.uniform_int(0, 6);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
    for (auto& v : m) v = rng.uniform() < 0.08;
    EXPECT_EQ(dilate_disk(m, h, w, r), dilate_loop(m, h, w, r)) << h << "x" << w << " r=" << r;
  }
}

TEST(Trimap, FractionalAlphaIsAlwaysUnknown) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    AlphaMatte a(20, 20);
    for (double& v : a.data()) {
      const double u = rng.uniform();
      v = u < 0.4 ? 0.0 : u < 0.8 ? 1.0 : rng.uniform();
    }
    const auto t = make_trimap(a, {}, rng.next_seed());
    EXPECT_GE(t.radius, 1);
    EXPECT_LE(t.radius, 15);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        const double v = a.at(y, x);
        const auto label = t.trimap.at(y, x);
        if (v > 0 && v < 1) {
          EXPECT_EQ(label, static_cast<std::uint8_t>(TrimapLabel::kUnknown));
        } else if (label != static_cast<std::uint8_t>(TrimapLabel::kUnknown)) {
          EXPECT_EQ(label, v == 1.0 ? 255 : 0);
        }
      }
  }
}

TEST(Trimap, RejectsOutOfRangeAlpha) {
  AlphaMatte a(3, 3, 0.5);
  a.at(1, 1) = 1.5;
  EXPECT_THROW(make_trimap(a, {}, 1), Error);
}

TEST(Saliency, RangeAndMassPreserved) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = rng.uniform_int(16, 80), w = rng.uniform_int(16, 80);
    const AlphaMatte a = random_matte(h, w, rng);
    const SaliencyTarget s = make_saliency_target(a, 16, 1.0);
    const AlphaMatte d = area_downsample(a, 16);
    ASSERT_TRUE(s.plane.same_size(d));
    double ms = 0, md = 0;
    for (double v : s.plane.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      ms += v;
    }
    for (double v : d.data()) md += v;
    EXPECT_LE(std::abs(ms - md) / d.pixel_count(), 1e-3);
  }
}

TEST(Saliency, DownsampleAveragesPartialBlocks) {
  AlphaMatte a(3, 3);
  for (int i = 0; i < 9; ++i) a.data()[i] = i;
  const AlphaMatte d = area_downsample(a, 2);
  ASSERT_TRUE(d.same_size(2, 2));
  EXPECT_DOUBLE_EQ(d.at(0, 0), (0 + 1 + 3 + 4) / 4.0);
  EXPECT_DOUBLE_EQ(d.at(0, 1), (2 + 5) / 2.0);
  EXPECT_DOUBLE_EQ(d.at(1, 0), (6 + 7) / 2.0);
  EXPECT_DOUBLE_EQ(d.at(1, 1), 8.0);
}

TEST(Saliency, ReflectIndex) {
  EXPECT_EQ(reflect_index(-1, 4), 0);
  EXPECT_EQ(reflect_index(-2, 4), 1);
  EXPECT_EQ(reflect_index(4, 4), 3);
  EXPECT_EQ(reflect_index(5, 4), 2);
  EXPECT_EQ(reflect_index(9, 4), 1);
  EXPECT_EQ(reflect_index(0, 1), 0);
  EXPECT_EQ(reflect_index(-3, 1), 0);
}

TEST(RenderSample, FlagsEmptyAlpha) {
  Rng rng(8);
  ForegroundAsset fg{random_image(16, 16, rng), AlphaMatte(16, 16, 0.0), "empty"};
  const auto s = render_sample(fg, random_image(16, 16, rng), "bg", 3);
  EXPECT_NE(std::find(s.flags.begin(), s.flags.end(), "empty_alpha"), s.flags.end());
  EXPECT_EQ(s.saliency_target.downsample, 16);
}

TEST(Synthetic, ScenesAreDeterministicAndCaptioned) {
  const auto a = synthetic::make_composites(3, 32, 4);
  const auto b = synthetic::make_composites(3, 32, 4);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].alpha_gt, b[i].alpha_gt);
  }
  for (const auto& p : synthetic::make_caption_corpus(5, 32, 1)) {
    EXPECT_EQ(p.caption.rfind("a ", 0), 0u);
    EXPECT_NE(p.caption.find(" background ."), std::string::npos);
  }
}

}  // namespace
}  // namespace spgim
