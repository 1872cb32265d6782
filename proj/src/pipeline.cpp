#include "spgim/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/imgproc.hpp>

#include "spgim/synthesis.hpp"
#include "spgim/train.hpp"

namespace spgim {

template <int C>
Raster<C> pad_replicate(const Raster<C>& src, int multiple) {
  if (multiple <= 0) throw Error("pad_replicate: multiple must be positive");
  if (src.empty()) throw Error("pad_replicate: empty raster");
  const int h = (src.height() + multiple - 1) / multiple * multiple;
  const int w = (src.width() + multiple - 1) / multiple * multiple;
  Raster<C> out(h, w);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = src.at(c, std::min(y, src.height() - 1), std::min(x, src.width() - 1));
  return out;
}

template <int C>
Raster<C> crop(const Raster<C>& src, int height, int width) {
  if (height > src.height() || width > src.width() || height < 0 || width < 0)
    throw Error("crop: window exceeds raster");
  Raster<C> out(height, width);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = src.at(c, y, x);
  return out;
}

template Raster<1> pad_replicate(const Raster<1>&, int);
template Raster<3> pad_replicate(const Raster<3>&, int);
template Raster<1> crop(const Raster<1>&, int, int);
template Raster<3> crop(const Raster<3>&, int, int);

Pipeline::Pipeline(SpdNetwork spd, SpgmNetwork spgm) : spd_(std::move(spd)), spgm_(std::move(spgm)) {
  if (!spd_.initialized() || !spgm_.initialized()) throw Error("pipeline: networks are not initialized");
}

Pipeline Pipeline::from_checkpoints(const Checkpoint& spd, const Checkpoint& spgm) {
  const auto diff = pairing_mismatches(spd, spgm);
  if (!diff.empty()) {
    std::string names;
    for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
    throw Error("SPD and SPGM checkpoints do not match: " + names);
  }
  return Pipeline(load_spd(spd), load_spgm(spgm));
}

Pipeline Pipeline::load(const std::filesystem::path& spd, const std::filesystem::path& spgm) {
  return from_checkpoints(load_checkpoint(spd), load_checkpoint(spgm));
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

PipelineResult Pipeline::run(const ImagePlane& image, bool keep_attention) const {
  const int h = image.height(), w = image.width();
  const Tensor padded = pad_replicate(image, 32).to_tensor();
  const SpdInference g = run_spd(spd_, padded);
  const FeaturePyramid guid = as_constants(g.pyramid);

  NoGradGuard guard;
  SpgmTrace trace;
  const bool tst = spgm_.config().variant != SpgmVariant::kNoTst;
  MattingOutput m = spgm_.forward(constant(padded), constant(g.mask_full), tst ? &guid : nullptr,
                                  keep_attention ? &trace : nullptr);

  PipelineResult r;
  const int d = spd_.config().mask_downsample;
  r.mask = crop(AlphaMatte::from_tensor(g.mask), ceil_div(h, d), ceil_div(w, d));
  r.mask_full = crop(AlphaMatte::from_tensor(g.mask_full), h, w);
  const auto& strides = spgm_.config().level_strides;
  for (int i = 0; i < 3; ++i)
    r.level_alphas[i] =
        crop(AlphaMatte::from_tensor(m.alphas[i].value()), ceil_div(h, strides[i]), ceil_div(w, strides[i]));
  r.alpha = r.level_alphas[2];
  if (keep_attention) r.attention = std::move(trace.attention);
  return r;
}

std::vector<std::filesystem::path> write_intermediates(const std::filesystem::path& dir, const std::string& stem,
                                                       const PipelineResult& result, int bit_depth) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto put = [&](const std::string& suffix, const AlphaMatte& a) {
    const auto path = dir / (stem + "_" + suffix + ".png");
    write_alpha(path, a, bit_depth);
    written.push_back(path);
  };
  put("alpha", result.alpha);
  put("mask", result.mask);
  put("mask_full", result.mask_full);
  for (int i = 0; i < 3; ++i) put("level" + std::to_string(i + 1), result.level_alphas[i]);
  return written;
}

std::vector<std::filesystem::path> write_attention(const std::filesystem::path& dir, const std::string& stem,
                                                   const PipelineResult& result) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (int k = 0; k < 3; ++k) {
    if (result.attention[k].empty()) continue;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : result.attention[k])
      j.push_back({{"shape", t.shape()}, {"values", std::vector<double>(t.data(), t.data() + t.size())}});
    const auto path = dir / (stem + "_attention_stage" + std::to_string(k + 1) + ".json");
    std::ofstream(path) << j.dump();
    written.push_back(path);
  }
  return written;
}

namespace {

cv::Mat to_mat(const ImagePlane& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        m.at<cv::Vec3b>(y, x)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255));
  return m;
}

ImagePlane from_mat(const cv::Mat& m) {
  ImagePlane img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = m.at<cv::Vec3b>(y, x)[c] / 255.0;
  return img;
}

ImagePlane gray(const AlphaMatte& a) {
  ImagePlane img(a.height(), a.width());
  for (int c = 0; c < 3; ++c)
    std::copy(a.data().begin(), a.data().end(), img.data().begin() + c * a.pixel_count());
  return img;
}

}  // namespace

ImagePlane comparison_sheet(const ImagePlane& image, const std::string& image_id,
                            const std::vector<MethodAlphas>& methods, const ComparisonLayout& layout) {
  if (layout.cell < 8) throw Error("comparison cell must be at least 8 pixels");
  const int cell = layout.cell;
  const int columns = static_cast<int>(methods.size()) + 2;
  cv::Mat sheet(cell, cell * columns, CV_8UC3, cv::Scalar(40, 40, 40));

  const auto place = [&](int col, const ImagePlane* content, const std::string& label) {
    cv::Mat roi = sheet(cv::Rect(col * cell, 0, cell, cell));
    if (content) to_mat(resize_bilinear(*content, cell, cell)).copyTo(roi);
    if (layout.labels) {
      const double size = cell / 256.0;
      cv::putText(roi, label, cv::Point(3, std::max(10, cell / 12)), cv::FONT_HERSHEY_SIMPLEX, size,
                  cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
    }
  };

  place(0, &image, "input");
  const AlphaMatte* first = nullptr;
  std::string first_name;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const auto it = methods[k].alphas.find(image_id);
    if (it == methods[k].alphas.end()) {
      place(static_cast<int>(k) + 1, nullptr, methods[k].name + " (missing)");
      continue;
    }
    if (!it->second.same_size(image)) throw Error("comparison: alpha of " + methods[k].name + " does not match " + image_id);
    const ImagePlane g = gray(it->second);
    place(static_cast<int>(k) + 1, &g, methods[k].name);
    if (!first) {
      first = &it->second;
      first_name = methods[k].name;
    }
  }
  if (first) {
    ImagePlane backdrop(image.height(), image.width());
    for (int c = 0; c < 3; ++c)
      std::fill_n(backdrop.data().begin() + c * image.pixel_count(), image.pixel_count(), layout.background[c]);
    const ImagePlane cutout = compose(image, *first, backdrop);
    place(columns - 1, &cutout, "cutout " + first_name);
  } else {
    place(columns - 1, nullptr, "cutout (missing)");
  }
  return from_mat(sheet);
}

std::vector<std::filesystem::path> emit_comparison(const std::vector<std::pair<std::string, ImagePlane>>& images,
                                                   const std::vector<MethodAlphas>& methods,
                                                   const std::filesystem::path& out_dir,
                                                   const ComparisonLayout& layout) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [id, image] : images) {
    const auto path = out_dir / (id + "_compare.png");
    write_image(path, comparison_sheet(image, id, methods, layout));
    written.push_back(path);
  }
  return written;
}

}  // namespace spgim
