#include "spgim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

namespace spgim::metrics {

namespace {

void check_pair(const AlphaMatte& pred, const AlphaMatte& gt, Region region, const char* what) {
  if (!pred.same_size(gt))
    throw Error(std::string(what) + ": prediction " + std::to_string(pred.height()) + "x" +
                std::to_string(pred.width()) + " vs ground truth " + std::to_string(gt.height()) + "x" +
                std::to_string(gt.width()));
  if (region && !region->same_size(gt)) throw Error(std::string(what) + ": region mask size differs from the mattes");
}

bool inside(Region region, std::size_t i) { return region == nullptr || region->data()[i] != 0.0; }

double gauss(double x, double sigma) {
  return std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
}
double dgauss(double x, double sigma) { return -x * gauss(x, sigma) / (sigma * sigma); }

/// True convolution with replicated borders.
AlphaMatte convolve_replicate(const AlphaMatte& a, const std::vector<double>& k, int half) {
  const int h = a.height(), w = a.width(), size = 2 * half + 1;
  AlphaMatte out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < size; ++i) {
        const int sy = std::clamp(y - (i - half), 0, h - 1);
        for (int j = 0; j < size; ++j) {
          const int sx = std::clamp(x - (j - half), 0, w - 1);
          acc += k[i * size + j] * a.at(sy, sx);
        }
      }
      out.at(y, x) = acc;
    }
  return out;
}

/// Largest 4-connected component of `on`. Components are numbered in
/// column-major order of their first pixel; ties keep the first.
std::vector<char> largest_component(const std::vector<char>& on, int h, int w) {
  std::vector<int> label(on.size(), -1);
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::queue<int> q;
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y) {
      const int start = y * w + x;
      if (!on[start] || label[start] >= 0) continue;
      const int id = next++;
      std::size_t size = 0;
      label[start] = id;
      q.push(start);
      while (!q.empty()) {
        const int p = q.front();
        q.pop();
        ++size;
        const int py = p / w, px = p % w;
        const int nb[4][2] = {{py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
          const int qi = n[0] * w + n[1];
          if (on[qi] && label[qi] < 0) {
            label[qi] = id;
            q.push(qi);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best = id;
      }
    }
  std::vector<char> omega(on.size(), 0);
  if (best >= 0)
    for (std::size_t i = 0; i < on.size(); ++i) omega[i] = label[i] == best;
  return omega;
}

}  // namespace

AlphaMatte unknown_region(const TrimapPlane& trimap) {
  AlphaMatte m(trimap.height, trimap.width);
  for (std::size_t i = 0; i < trimap.labels.size(); ++i)
    m.data()[i] = trimap.labels[i] == static_cast<std::uint8_t>(TrimapLabel::kUnknown) ? 1.0 : 0.0;
  return m;
}

double sad(const AlphaMatte& pred, const AlphaMatte& gt, Region region) {
  check_pair(pred, gt, region, "sad");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data().size(); ++i)
    if (inside(region, i)) acc += std::abs(pred.data()[i] - gt.data()[i]);
  return acc / 1000.0;
}

double mse(const AlphaMatte& pred, const AlphaMatte& gt, Region region) {
  check_pair(pred, gt, region, "mse");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.data().size(); ++i)
    if (inside(region, i)) {
      const double d = pred.data()[i] - gt.data()[i];
      acc += d * d;
      ++count;
    }
  if (count == 0) throw Error("mse: evaluation region is empty");
  return acc / static_cast<double>(count);
}

int gaussian_gradient_halfsize(double sigma) {
  if (!(sigma > 0.0)) throw Error("grad: sigma must be positive");
  const double epsilon = 1e-2;
  return static_cast<int>(
      std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2 * std::numbers::pi) * sigma * epsilon))));
}

std::vector<double> gaussian_gradient_kernel(double sigma) {
  const int half = gaussian_gradient_halfsize(sigma);
  const int size = 2 * half + 1;
  std::vector<double> hx(static_cast<std::size_t>(size) * size);
  double norm = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double v = gauss(i - half, sigma) * dgauss(j - half, sigma);
      hx[i * size + j] = v;
      norm += v * v;
    }
  norm = std::sqrt(norm);
  for (double& v : hx) v /= norm;
  return hx;
}

AlphaMatte gradient_magnitude(const AlphaMatte& a, double sigma) {
  const int half = gaussian_gradient_halfsize(sigma);
  const int size = 2 * half + 1;
  if (a.height() < size || a.width() < size)
    throw Error("grad: matte " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                " is smaller than the " + std::to_string(size) + "x" + std::to_string(size) + " filter");
  const auto hx = gaussian_gradient_kernel(sigma);
  std::vector<double> hy(hx.size());
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) hy[i * size + j] = hx[j * size + i];
  const AlphaMatte gx = convolve_replicate(a, hx, half);
  const AlphaMatte gy = convolve_replicate(a, hy, half);
  AlphaMatte mag(a.height(), a.width());
  for (std::size_t i = 0; i < mag.data().size(); ++i)
    mag.data()[i] = std::hypot(gx.data()[i], gy.data()[i]);
  return mag;
}

double grad(const AlphaMatte& pred, const AlphaMatte& gt, double sigma, Region region) {
  check_pair(pred, gt, region, "grad");
  const AlphaMatte mp = gradient_magnitude(pred, sigma);
  const AlphaMatte mg = gradient_magnitude(gt, sigma);
  double acc = 0.0;
  for (std::size_t i = 0; i < mp.data().size(); ++i)
    if (inside(region, i)) {
      const double d = mp.data()[i] - mg.data()[i];
      acc += d * d;
    }
  return acc / 1000.0;
}

double conn(const AlphaMatte& pred, const AlphaMatte& gt, double step, Region region) {
  check_pair(pred, gt, region, "conn");
  if (!(step > 0.0 && step < 1.0)) throw Error("conn: step must be in (0, 1)");
  const int h = pred.height(), w = pred.width();
  const std::size_t n = pred.data().size();
  const auto& p = pred.data();
  const auto& g = gt.data();
  const int steps = static_cast<int>(std::floor(1.0 / step + 1e-9));

  std::vector<double> l_map(n, -1.0);
  std::vector<char> on(n);
  for (int k = 1; k <= steps; ++k) {
    const double t = k * step;
    for (std::size_t i = 0; i < n; ++i) on[i] = p[i] >= t && g[i] >= t;
    const auto omega = largest_component(on, h, w);
    for (std::size_t i = 0; i < n; ++i)
      if (l_map[i] == -1.0 && !omega[i]) l_map[i] = (k - 1) * step;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (l_map[i] == -1.0) l_map[i] = 1.0;
    if (!inside(region, i)) continue;
    const double pd = p[i] - l_map[i];
    const double gd = g[i] - l_map[i];
    const double pphi = 1.0 - (pd >= 0.15 ? pd : 0.0);
    const double gphi = 1.0 - (gd >= 0.15 ? gd : 0.0);
    acc += std::abs(pphi - gphi);
  }
  return acc / 1000.0;
}

MetricReport evaluate(const AlphaMatte& pred, const AlphaMatte& gt, Region region) {
  MetricReport r;
  r.sad = sad(pred, gt, region);
  r.mse = mse(pred, gt, region);
  r.grad = grad(pred, gt, 1.4, region);
  r.conn = conn(pred, gt, 0.1, region);
  r.region = region ? "unknown-only" : "whole-image";
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& rows) {
  MetricReport m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.sad += r.sad;
    m.mse += r.mse;
    m.grad += r.grad;
    m.conn += r.conn;
  }
  const double n = static_cast<double>(rows.size());
  m.sad /= n;
  m.mse /= n;
  m.grad /= n;
  m.conn /= n;
  m.region = rows.front().region;
  return m;
}

}  // namespace spgim::metrics
