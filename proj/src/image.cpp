#include "spgim/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "spgim/ops.hpp"

namespace spgim {

std::size_t TrimapPlane::count(TrimapLabel l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), static_cast<std::uint8_t>(l)));
}

void require_unit_range(const AlphaMatte& a, const char* what) {
  for (double v : a.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw Error(std::string(what) + ": alpha value " + std::to_string(v) + " outside [0,1]");
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

namespace {

cv::Mat load(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error("cannot read image " + path.string());
  if (m.depth() != CV_8U && m.depth() != CV_16U) throw Error("unsupported bit depth in " + path.string());
  return m;
}

double scale_of(const cv::Mat& m) { return m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0; }

double sample(const cv::Mat& m, int y, int x, int c) {
  if (m.depth() == CV_16U) return m.ptr<std::uint16_t>(y)[x * m.channels() + c];
  return m.ptr<std::uint8_t>(y)[x * m.channels() + c];
}

void save(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image " + path.string());
}

}  // namespace

ImagePlane read_image(const std::filesystem::path& path) {
  cv::Mat m = load(path);
  const double s = scale_of(m);
  ImagePlane img(m.rows, m.cols);
  const int ch = m.channels();
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) {
        // OpenCV stores BGR(A)
        const int src_c = ch >= 3 ? 2 - c : 0;
        img.at(c, y, x) = sample(m, y, x, src_c) * s;
      }
  return img;
}

AlphaMatte read_alpha(const std::filesystem::path& path) {
  cv::Mat m = load(path);
  const double s = scale_of(m);
  AlphaMatte a(m.rows, m.cols);
  // 4-channel inputs carry alpha in the last channel; colour inputs use the first.
  const int src_c = m.channels() == 4 ? 3 : 0;
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) a.at(y, x) = sample(m, y, x, src_c) * s;
  return a;
}

TrimapPlane read_trimap(const std::filesystem::path& path) {
  AlphaMatte a = read_alpha(path);
  TrimapPlane t(a.height(), a.width(), TrimapLabel::kBackground);
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      const double v = a.at(y, x);
      t.at(y, x) = static_cast<std::uint8_t>(v <= 0.0 ? TrimapLabel::kBackground
                                             : v >= 1.0 ? TrimapLabel::kForeground
                                                        : TrimapLabel::kUnknown);
    }
  return t;
}

void write_image(const std::filesystem::path& path, const ImagePlane& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        m.ptr<std::uint8_t>(y)[x * 3 + (2 - c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  save(path, m);
}

void write_alpha(const std::filesystem::path& path, const AlphaMatte& a, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("alpha bit depth must be 8 or 16");
  if (bit_depth == 8) {
    cv::Mat m(a.height(), a.width(), CV_8UC1);
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        m.ptr<std::uint8_t>(y)[x] = static_cast<std::uint8_t>(std::lround(std::clamp(a.at(y, x), 0.0, 1.0) * 255.0));
    save(path, m);
  } else {
    cv::Mat m(a.height(), a.width(), CV_16UC1);
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        m.ptr<std::uint16_t>(y)[x] =
            static_cast<std::uint16_t>(std::lround(std::clamp(a.at(y, x), 0.0, 1.0) * 65535.0));
    save(path, m);
  }
}

void write_trimap(const std::filesystem::path& path, const TrimapPlane& t) {
  cv::Mat m(t.height, t.width, CV_8UC1);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) m.ptr<std::uint8_t>(y)[x] = t.at(y, x);
  save(path, m);
}

template <int C>
Raster<C> resize_bilinear(const Raster<C>& src, int out_h, int out_w) {
  NoGradGuard guard;
  Var v = ops::resize_bilinear(constant(src.to_tensor()), out_h, out_w);
  return Raster<C>::from_tensor(v.value());
}

template Raster<1> resize_bilinear(const Raster<1>&, int, int);
template Raster<3> resize_bilinear(const Raster<3>&, int, int);

ImagePlane resize_cover_crop(const ImagePlane& src, int out_h, int out_w) {
  if (src.empty()) throw Error("resize_cover_crop: empty image");
  const double s = std::max(static_cast<double>(out_h) / src.height(), static_cast<double>(out_w) / src.width());
  const int h = std::max(out_h, static_cast<int>(std::ceil(src.height() * s - 1e-9)));
  const int w = std::max(out_w, static_cast<int>(std::ceil(src.width() * s - 1e-9)));
  ImagePlane scaled = resize_bilinear(src, h, w);
  const int y0 = (h - out_h) / 2;
  const int x0 = (w - out_w) / 2;
  ImagePlane out(out_h, out_w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(c, y, x) = scaled.at(c, y0 + y, x0 + x);
  return out;
}

}  // namespace spgim
