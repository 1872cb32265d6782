#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spgim/tensor.hpp"

namespace spgim {

/// Planar (CHW) raster of doubles, nominally in [0,1].
template <int Channels>
class Raster {
 public:
  static constexpr int kChannels = Channels;

  Raster() = default;
  Raster(int height, int width, double fill = 0.0)
      : height_(height), width_(width), data_(static_cast<std::size_t>(Channels) * height * width, fill) {
    if (height < 0 || width < 0) throw Error("raster dimensions must be non-negative");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double& at(int y, int x) requires(Channels == 1) { return at(0, y, x); }
  double at(int y, int x) const requires(Channels == 1) { return at(0, y, x); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_size(int h, int w) const { return h == height_ && w == width_; }
  template <int C>
  bool same_size(const Raster<C>& o) const {
    return o.height() == height_ && o.width() == width_;
  }

  /// Rank-4 tensor [1, Channels, H, W].
  Tensor to_tensor() const { return Tensor({1, Channels, height_, width_}, data_); }
  /// Sample `n` of a [N, Channels, H, W] tensor.
  static Raster from_tensor(const Tensor& t, int n = 0) {
    if (t.rank() != 4 || t.dim(1) != Channels) throw Error("raster: tensor " + shape_str(t.shape()) + " has wrong layout");
    Raster r(t.dim(2), t.dim(3));
    const std::size_t per = r.data_.size();
    std::copy(t.data() + n * per, t.data() + (n + 1) * per, r.data_.begin());
    return r;
  }

  bool operator==(const Raster&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

using ImagePlane = Raster<3>;
using AlphaMatte = Raster<1>;

/// Downsampled, blurred alpha used to supervise the saliency branch.
struct SaliencyTarget {
  AlphaMatte plane;
  int downsample = 1;
};

enum class TrimapLabel : std::uint8_t { kBackground = 0, kUnknown = 128, kForeground = 255 };

struct TrimapPlane {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  TrimapPlane() = default;
  TrimapPlane(int h, int w, TrimapLabel fill) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, static_cast<std::uint8_t>(fill)) {}
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count(TrimapLabel l) const;
};

void require_unit_range(const AlphaMatte& a, const char* what);

/// Round-trip through 8-bit storage: round(v*255)/255 with clamping.
double quantize8(double v);

// PNG / image file I/O. Colour images are returned as RGB, grayscale inputs
// are replicated; 16-bit files are normalized by 65535.
ImagePlane read_image(const std::filesystem::path& path);
AlphaMatte read_alpha(const std::filesystem::path& path);
TrimapPlane read_trimap(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ImagePlane& img);
void write_alpha(const std::filesystem::path& path, const AlphaMatte& a, int bit_depth = 8);
void write_trimap(const std::filesystem::path& path, const TrimapPlane& t);

/// Bilinear resize (half-pixel centres).
template <int C>
Raster<C> resize_bilinear(const Raster<C>& src, int out_h, int out_w);

/// Scale so both sides cover (out_h, out_w), then centre-crop.
ImagePlane resize_cover_crop(const ImagePlane& src, int out_h, int out_w);

}  // namespace spgim
