#include "spgim/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace spgim::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Var& v, int rank, const char* op) {
  if (v.value().rank() != rank)
    throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                shape_str(v.shape()));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Var unary_elementwise(const Var& a, F forward, auto derivative) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  return make_result(std::move(out), {a}, [derivative](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(p.value[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (p.requires_grad) p.grad_buffer().add_(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.grad_buffer().add_(self.grad);
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary_elementwise(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var relu(const Var& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var add_scalars(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw Error("add_scalars: term/weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw Error("add_scalars: terms must be scalars");
    total += weights[i] * terms[i].value()[0];
  }
  return make_result(Tensor({1}, total), terms, [weights](Node& self) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeometry {
  int n, c, h, w, o, kh, kw, oh, ow;
  ConvSpec spec;
  // kernel rows / columns that touch the input for at least one output pixel
  std::vector<int> ti, tj;
  bool pruned() const { return static_cast<int>(ti.size() * tj.size()) != kh * kw; }
  int col_rows() const { return c * static_cast<int>(ti.size() * tj.size()); }
  int col_cols() const { return oh * ow; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && spec.stride == 1 && spec.pad_h == 0 && spec.pad_w == 0;
  }
};

/// im2col restricted to output rows [oy0, oy1): a (c*kh*kw) x ((oy1-oy0)*ow) block.
void im2col(const double* x, const ConvGeometry& g, int oy0, int oy1, double* col) {
  const ConvSpec& s = g.spec;
  const std::size_t cols = static_cast<std::size_t>(oy1 - oy0) * g.ow;
  for (int c = 0; c < g.c; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (std::size_t ii = 0; ii < g.ti.size(); ++ii) {
      const int i = g.ti[ii];
      for (std::size_t jj = 0; jj < g.tj.size(); ++jj) {
        const int j = g.tj[jj];
        double* row = col + ((c * g.ti.size() + ii) * g.tj.size() + jj) * cols;
        const int x_off = j * s.dil_w - s.pad_w;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int y = oy * s.stride - s.pad_h + i * s.dil_h;
          double* dst = row + static_cast<std::size_t>(oy - oy0) * g.ow;
          if (y < 0 || y >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(y) * g.w;
          if (s.stride == 1) {
            // valid ox range: 0 <= ox + x_off < w
            const int lo = std::clamp(-x_off, 0, g.ow);
            const int hi = std::clamp(g.w - x_off, lo, g.ow);
            std::fill(dst, dst + lo, 0.0);
            std::copy(src + lo + x_off, src + hi + x_off, dst + lo);
            std::fill(dst + hi, dst + g.ow, 0.0);
          } else {
            for (int ox = 0; ox < g.ow; ++ox) {
              const int xx = ox * s.stride + x_off;
              dst[ox] = (xx >= 0 && xx < g.w) ? src[xx] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, int oy0, int oy1, double* dx) {
  const ConvSpec& s = g.spec;
  const std::size_t cols = static_cast<std::size_t>(oy1 - oy0) * g.ow;
  for (int c = 0; c < g.c; ++c) {
    double* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (std::size_t ii = 0; ii < g.ti.size(); ++ii) {
      const int i = g.ti[ii];
      for (std::size_t jj = 0; jj < g.tj.size(); ++jj) {
        const int j = g.tj[jj];
        const double* row = col + ((c * g.ti.size() + ii) * g.tj.size() + jj) * cols;
        const int x_off = j * s.dil_w - s.pad_w;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int y = oy * s.stride - s.pad_h + i * s.dil_h;
          if (y < 0 || y >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy - oy0) * g.ow;
          double* dst = plane + static_cast<std::size_t>(y) * g.w;
          if (s.stride == 1) {
            const int lo = std::clamp(-x_off, 0, g.ow);
            const int hi = std::clamp(g.w - x_off, lo, g.ow);
            for (int ox = lo; ox < hi; ++ox) dst[ox + x_off] += src[ox];
          } else {
            for (int ox = 0; ox < g.ow; ++ox) {
              const int xx = ox * s.stride + x_off;
              if (xx >= 0 && xx < g.w) dst[xx] += src[ox];
            }
          }
        }
      }
    }
  }
}

/// Output rows per im2col block, keeping a block around 256 KiB.
int rows_per_tile(const ConvGeometry& g) {
  const std::size_t per_row = static_cast<std::size_t>(g.col_rows()) * g.ow * sizeof(double);
  return static_cast<int>(std::clamp<std::size_t>((256u << 10) / std::max<std::size_t>(per_row, 1), 1, g.oh));
}

/// weight[o, c, kh, kw] restricted to the used taps, as an (o, c*taps) matrix.
std::vector<double> gather_taps(const Tensor& w, const ConvGeometry& g) {
  const std::size_t taps = g.ti.size() * g.tj.size();
  std::vector<double> out(static_cast<std::size_t>(g.o) * g.c * taps);
  std::size_t k = 0;
  for (int o = 0; o < g.o; ++o)
    for (int c = 0; c < g.c; ++c)
      for (int i : g.ti)
        for (int j : g.tj) out[k++] = w.data()[((static_cast<std::size_t>(o) * g.c + c) * g.kh + i) * g.kw + j];
  return out;
}

void scatter_taps(const std::vector<double>& used, const ConvGeometry& g, Tensor& dw) {
  std::size_t k = 0;
  for (int o = 0; o < g.o; ++o)
    for (int c = 0; c < g.c; ++c)
      for (int i : g.ti)
        for (int j : g.tj) dw.data()[((static_cast<std::size_t>(o) * g.c + c) * g.kh + i) * g.kw + j] += used[k++];
}

using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.spec = spec;
  if (weight.dim(1) != g.c)
    throw Error("conv2d: input has " + std::to_string(g.c) + " channels, weight expects " +
                std::to_string(weight.dim(1)));
  if (spec.stride < 1 || spec.dil_h < 1 || spec.dil_w < 1) throw Error("conv2d: stride/dilation must be >= 1");
  const int span_h = g.h + 2 * spec.pad_h - spec.dil_h * (g.kh - 1) - 1;
  const int span_w = g.w + 2 * spec.pad_w - spec.dil_w * (g.kw - 1) - 1;
  if (span_h < 0 || span_w < 0) throw Error("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  g.oh = span_h / spec.stride + 1;
  g.ow = span_w / spec.stride + 1;
  if (bias.defined() && (bias.value().size() != static_cast<std::size_t>(g.o)))
    throw Error("conv2d: bias size mismatch");

  for (int i = 0; i < g.kh; ++i)
    for (int oy = 0; oy < g.oh; ++oy) {
      const int y = oy * spec.stride - spec.pad_h + i * spec.dil_h;
      if (y >= 0 && y < g.h) {
        g.ti.push_back(i);
        break;
      }
    }
  for (int j = 0; j < g.kw; ++j)
    for (int ox = 0; ox < g.ow; ++ox) {
      const int xx = ox * spec.stride - spec.pad_w + j * spec.dil_w;
      if (xx >= 0 && xx < g.w) {
        g.tj.push_back(j);
        break;
      }
    }

  const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.o) * g.oh * g.ow;
  const bool pointwise = g.is_pointwise();
  const int tile = rows_per_tile(g);
  const int K = g.col_rows();
  const int HW = g.col_cols();

  Tensor out({g.n, g.o, g.oh, g.ow});
  // Taps that only ever see padding are dropped from the product.
  const std::vector<double> w_used = g.pruned() ? gather_taps(weight.value(), g) : std::vector<double>{};
  ConstMapMat W(g.pruned() ? w_used.data() : weight.value().data(), g.o, K);
  // Column blocks are kept for the backward pass unless that would be large;
  // then they are rebuilt tile by tile.
  const std::size_t col_total = static_cast<std::size_t>(g.n) * K * HW;
  const bool keep = !pointwise && grad_enabled() && col_total * sizeof(double) <= (64u << 20);
  const std::size_t tile_size = static_cast<std::size_t>(K) * tile * g.ow;
  std::vector<double> cols(pointwise ? 0 : keep ? col_total : tile_size);
  for (int n = 0; n < g.n; ++n) {
    const double* xn = x.value().data() + n * in_stride;
    double* yn = out.data() + n * out_stride;
    if (pointwise) {
      MapMat(yn, g.o, HW).noalias() = W * ConstMapMat(xn, K, HW);
    } else {
      for (int oy0 = 0; oy0 < g.oh; oy0 += tile) {
        const int oy1 = std::min(g.oh, oy0 + tile);
        const int nc = (oy1 - oy0) * g.ow;
        double* block = keep ? cols.data() + static_cast<std::size_t>(n) * K * HW + static_cast<std::size_t>(K) * oy0 * g.ow
                             : cols.data();
        im2col(xn, g, oy0, oy1, block);
        StridedMat(yn + oy0 * g.ow, g.o, nc, Eigen::OuterStride<>(HW)).noalias() = W * ConstMapMat(block, K, nc);
      }
    }
    if (bias.defined()) {
      const double* b = bias.value().data();
      MapMat Y(yn, g.o, HW);
      for (int o = 0; o < g.o; ++o) Y.row(o).array() += b[o];
    }
  }

  const bool has_bias = bias.defined();
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  if (!keep) cols.clear();
  return make_result(std::move(out), std::move(inputs),
                     [g, has_bias, in_stride, out_stride, pointwise, tile, keep, cached = std::move(cols)](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    const int K = g.col_rows();
    const int HW = g.col_cols();
    const std::vector<double> w_used = g.pruned() ? gather_taps(pw.value, g) : std::vector<double>{};
    ConstMapMat W(g.pruned() ? w_used.data() : pw.value.data(), g.o, K);
    std::vector<double> dw_used(pw.requires_grad && g.pruned() ? static_cast<std::size_t>(g.o) * K : 0);
    double* dw = !pw.requires_grad ? nullptr : g.pruned() ? dw_used.data() : pw.grad_buffer().data();
    double* db = has_bias && parent(self, 2).requires_grad ? parent(self, 2).grad_buffer().data() : nullptr;
    double* dx_all = px.requires_grad ? px.grad_buffer().data() : nullptr;
    const std::size_t tile_size = static_cast<std::size_t>(K) * tile * g.ow;
    std::vector<double> cols(pointwise || keep ? 0 : tile_size);
    std::vector<double> dcols(pointwise || !dx_all ? 0 : tile_size);
    for (int n = 0; n < g.n; ++n) {
      const double* dyn = self.grad.data() + n * out_stride;
      const double* xn = px.value.data() + n * in_stride;
      if (db) {
        ConstMapMat dY(dyn, g.o, HW);
        for (int o = 0; o < g.o; ++o) db[o] += dY.row(o).sum();
      }
      if (pointwise) {
        ConstMapMat dY(dyn, g.o, HW);
        if (dw) MapMat(dw, g.o, K).noalias() += dY * ConstMapMat(xn, K, HW).transpose();
        if (dx_all) MapMat(dx_all + n * in_stride, K, HW).noalias() += W.transpose() * dY;
        continue;
      }
      for (int oy0 = 0; oy0 < g.oh; oy0 += tile) {
        const int oy1 = std::min(g.oh, oy0 + tile);
        const int nc = (oy1 - oy0) * g.ow;
        ConstStridedMat dY(dyn + oy0 * g.ow, g.o, nc, Eigen::OuterStride<>(HW));
        if (dw) {
          const double* block =
              keep ? cached.data() + static_cast<std::size_t>(n) * K * HW + static_cast<std::size_t>(K) * oy0 * g.ow
                   : cols.data();
          if (!keep) im2col(xn, g, oy0, oy1, cols.data());
          MapMat(dw, g.o, K).noalias() += dY * ConstMapMat(block, K, nc).transpose();
        }
        if (dx_all) {
          MapMat(dcols.data(), K, nc).noalias() = W.transpose() * dY;
          col2im(dcols.data(), g, oy0, oy1, dx_all + n * in_stride);
        }
      }
    }
    if (dw && g.pruned()) scatter_taps(dw_used, g, pw.grad_buffer());
  });
}

// ---------------------------------------------------------------------------
// normalization / pooling / resampling

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (groups < 1 || C % groups != 0)
    throw Error("group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                " groups");
  const int cpg = C / groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * HW;
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(N) * groups);
  const double* xv = x.value().data();
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
  for (int n = 0; n < N; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cpg) * HW;
      double m = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) m += xv[base + i];
      m /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
      var /= static_cast<double>(group_size);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(n) * groups + gi] = is;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gi * cpg + c;
        for (int i = 0; i < HW; ++i) {
          const std::size_t idx = base + static_cast<std::size_t>(c) * HW + i;
          xhat[idx] = (xv[idx] - m) * is;
          out[idx] = gv[ch] * xhat[idx] + bv[ch];
        }
      }
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, HW, groups, cpg,
                      group_size](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       const double* dy = self.grad.data();
                       if (pg.requires_grad || pb.requires_grad) {
                         double* dg = pg.requires_grad ? pg.grad_buffer().data() : nullptr;
                         double* db = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                         for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                             const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                             double sg = 0.0, sb = 0.0;
                             for (int i = 0; i < HW; ++i) {
                               sg += dy[base + i] * xhat[base + i];
                               sb += dy[base + i];
                             }
                             if (dg) dg[c] += sg;
                             if (db) db[c] += sb;
                           }
                       }
                       if (!px.requires_grad) return;
                       double* dx = px.grad_buffer().data();
                       const double* gv = pg.value.data();
                       std::vector<double> dxhat(group_size);
                       for (int n = 0; n < N; ++n)
                         for (int gi = 0; gi < groups; ++gi) {
                           const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cpg) * HW;
                           double m1 = 0.0, m2 = 0.0;
                           for (int c = 0; c < cpg; ++c)
                             for (int i = 0; i < HW; ++i) {
                               const std::size_t k = static_cast<std::size_t>(c) * HW + i;
                               dxhat[k] = dy[base + k] * gv[gi * cpg + c];
                               m1 += dxhat[k];
                               m2 += dxhat[k] * xhat[base + k];
                             }
                           m1 /= static_cast<double>(group_size);
                           m2 /= static_cast<double>(group_size);
                           const double is = inv_std[static_cast<std::size_t>(n) * groups + gi];
                           for (std::size_t k = 0; k < group_size; ++k)
                             dx[base + k] += is * (dxhat[k] - m1 - xhat[base + k] * m2);
                         }
                     });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  require_rank(x, 4, "max_pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 2 * pad - kernel) / stride + 1;
  const int OW = (W + 2 * pad - kernel) / stride + 1;
  Tensor out({N, C, OH, OW});
  std::vector<std::size_t> argmax(out.size());
  const double* xv = x.value().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = base;
        for (int i = 0; i < kernel; ++i) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= H) continue;
          for (int j = 0; j < kernel; ++j) {
            const int xx = ox * stride - pad + j;
            if (xx < 0 || xx >= W) continue;
            const std::size_t idx = base + static_cast<std::size_t>(y) * W + xx;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        out[o] = best;
        argmax[o] = best_idx;
      }
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

namespace {

struct LerpTap {
  int i0, i1;
  double w1;
};

std::vector<LerpTap> lerp_taps(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw Error("resize_bilinear: empty target size");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == out_h && W == out_w) return x;
  auto ty = lerp_taps(H, out_h);
  auto tx = lerp_taps(W, out_w);
  Tensor out({N, C, out_h, out_w});
  const double* xv = x.value().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = xv + static_cast<std::size_t>(nc) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(nc) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const LerpTap& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const LerpTap& b = tx[static_cast<std::size_t>(ox)];
        const double top = src[a.i0 * W + b.i0] * (1 - b.w1) + src[a.i0 * W + b.i1] * b.w1;
        const double bot = src[a.i1 * W + b.i0] * (1 - b.w1) + src[a.i1 * W + b.i1] * b.w1;
        dst[oy * out_w + ox] = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return make_result(std::move(out), {x}, [ty, tx, N, C, H, W, out_h, out_w](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data();
    for (int nc = 0; nc < N * C; ++nc) {
      double* dst = g + static_cast<std::size_t>(nc) * H * W;
      const double* dy = self.grad.data() + static_cast<std::size_t>(nc) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const LerpTap& a = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const LerpTap& b = tx[static_cast<std::size_t>(ox)];
          const double d = dy[oy * out_w + ox];
          dst[a.i0 * W + b.i0] += d * (1 - a.w1) * (1 - b.w1);
          dst[a.i0 * W + b.i1] += d * (1 - a.w1) * b.w1;
          dst[a.i1 * W + b.i0] += d * a.w1 * (1 - b.w1);
          dst[a.i1 * W + b.i1] += d * a.w1 * b.w1;
        }
      }
    }
  });
}

Var area_downsample(const Var& x, int factor) {
  require_rank(x, 4, "area_downsample");
  if (factor == 1) return x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (factor < 1 || H % factor != 0 || W % factor != 0)
    throw Error("area_downsample: " + shape_str(x.shape()) + " not divisible by " + std::to_string(factor));
  const int OH = H / factor, OW = W / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor out({N, C, OH, OW});
  const double* xv = x.value().data();
  for (int nc = 0; nc < N * C; ++nc)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        out[(static_cast<std::size_t>(nc) * OH + y / factor) * OW + xx / factor] +=
            xv[(static_cast<std::size_t>(nc) * H + y) * W + xx] * inv;
  return make_result(std::move(out), {x}, [N, C, H, W, OH, OW, factor, inv](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data();
    for (int nc = 0; nc < N * C; ++nc)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          g[(static_cast<std::size_t>(nc) * H + y) * W + xx] +=
              self.grad[(static_cast<std::size_t>(nc) * OH + y / factor) * OW + xx / factor] * inv;
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({N, C, 1, 1});
  const double* xv = x.value().data();
  for (int nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (int i = 0; i < HW; ++i) s += xv[static_cast<std::size_t>(nc) * HW + i];
    out[static_cast<std::size_t>(nc)] = s / HW;
  }
  return make_result(std::move(out), {x}, [N, C, HW](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data();
    for (int nc = 0; nc < N * C; ++nc) {
      const double d = self.grad[static_cast<std::size_t>(nc)] / HW;
      for (int i = 0; i < HW; ++i) g[static_cast<std::size_t>(nc) * HW + i] += d;
    }
  });
}

// ---------------------------------------------------------------------------
// layout ops

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  for (const Var& p : parts) require_rank(p, 4, "concat_channels");
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int C = 0;
  std::vector<int> offsets;
  for (const Var& p : parts) {
    if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
      throw Error("concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    offsets.push_back(C);
    C += p.dim(1);
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor out({N, C, H, W});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const int pc = parts[k].dim(1);
    for (int n = 0; n < N; ++n)
      std::copy_n(parts[k].value().data() + static_cast<std::size_t>(n) * pc * HW, pc * HW,
                  out.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * HW);
  }
  return make_result(std::move(out), parts, [offsets, N, C, HW](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      const int pc = p.value.dim(1);
      double* g = p.grad_buffer().data();
      for (int n = 0; n < N; ++n) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * HW;
        double* dst = g + static_cast<std::size_t>(n) * pc * HW;
        for (std::size_t i = 0; i < pc * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

Var concat_batch(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_batch: no inputs");
  Shape shape = parts[0].shape();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  int n = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw Error("concat_batch: " + shape_str(s) + " vs " + shape_str(shape));
    offsets.push_back(total);
    total += p.value().size();
    n += s[0];
  }
  shape[0] = n;
  Tensor out(shape);
  for (std::size_t k = 0; k < parts.size(); ++k)
    std::copy(parts[k].value().storage().begin(), parts[k].value().storage().end(), out.data() + offsets[k]);
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
    }
  });
}

Var slice_batch(const Var& x, int n) {
  Shape s = x.shape();
  if (n < 0 || n >= s[0]) throw Error("slice_batch: index out of range");
  const std::size_t per = x.value().size() / static_cast<std::size_t>(s[0]);
  s[0] = 1;
  std::vector<double> d(x.value().data() + n * per, x.value().data() + (n + 1) * per);
  return make_result(Tensor(s, std::move(d)), {x}, [n, per](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data() + n * per;
    for (std::size_t i = 0; i < per; ++i) g[i] += self.grad[i];
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  require_rank(x, 4, "slice_channels");
  const int N = x.dim(0), C = x.dim(1);
  if (begin < 0 || end > C || begin >= end) throw Error("slice_channels: bad range");
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int K = end - begin;
  Tensor out({N, K, x.dim(2), x.dim(3)});
  for (int n = 0; n < N; ++n)
    std::copy_n(x.value().data() + (static_cast<std::size_t>(n) * C + begin) * HW, K * HW,
                out.data() + static_cast<std::size_t>(n) * K * HW);
  return make_result(std::move(out), {x}, [N, C, K, begin, HW](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data();
    for (int n = 0; n < N; ++n) {
      const double* src = self.grad.data() + static_cast<std::size_t>(n) * K * HW;
      double* dst = g + (static_cast<std::size_t>(n) * C + begin) * HW;
      for (std::size_t i = 0; i < K * HW; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// matrix ops

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw Error("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.value().data(), m, k) * ConstMapMat(b.value().data(), k, n);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    ConstMapMat dY(self.grad.data(), m, n);
    if (pa.requires_grad)
      MapMat(pa.grad_buffer().data(), m, k).noalias() += dY * ConstMapMat(pb.value.data(), k, n).transpose();
    if (pb.requires_grad)
      MapMat(pb.grad_buffer().data(), k, n).noalias() += ConstMapMat(pa.value.data(), m, k).transpose() * dY;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw Error("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor out({m, n});
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.value().data(), m, k) * ConstMapMat(b.value().data(), n, k).transpose();
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    ConstMapMat dY(self.grad.data(), m, n);
    if (pa.requires_grad)
      MapMat(pa.grad_buffer().data(), m, k).noalias() += dY * ConstMapMat(pb.value.data(), n, k);
    if (pb.requires_grad)
      MapMat(pb.grad_buffer().data(), n, k).noalias() += dY.transpose() * ConstMapMat(pa.value.data(), m, k);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  const int m = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in)
    throw Error("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
  Tensor out({m, out_f});
  MapMat Y(out.data(), m, out_f);
  Y.noalias() = ConstMapMat(x.value().data(), m, in) * ConstMapMat(weight.value().data(), out_f, in).transpose();
  if (bias.defined())
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < out_f; ++c) Y(r, c) += bias.value()[static_cast<std::size_t>(c)];
  std::vector<Var> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [m, in, out_f, has_bias](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    ConstMapMat dY(self.grad.data(), m, out_f);
    if (px.requires_grad)
      MapMat(px.grad_buffer().data(), m, in).noalias() += dY * ConstMapMat(pw.value.data(), out_f, in);
    if (pw.requires_grad)
      MapMat(pw.grad_buffer().data(), out_f, in).noalias() += dY.transpose() * ConstMapMat(px.value.data(), m, in);
    if (has_bias && parent(self, 2).requires_grad) {
      double* db = parent(self, 2).grad_buffer().data();
      for (int c = 0; c < out_f; ++c) db[c] += dY.col(c).sum();
    }
  });
}

Var softmax_rows(const Var& x, bool causal) {
  require_rank(x, 2, "softmax_rows");
  const int R = x.dim(0), C = x.dim(1);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    const int limit = causal ? std::min(C, r + 1) : C;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < limit; ++c) mx = std::max(mx, x.value().at(r, c));
    double s = 0.0;
    for (int c = 0; c < limit; ++c) {
      const double e = std::exp(x.value().at(r, c) - mx);
      out.at(r, c) = e;
      s += e;
    }
    for (int c = 0; c < limit; ++c) out.at(r, c) /= s;
  }
  return make_result(std::move(out), {x}, [R, C](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += self.value.at(r, c) * self.grad.at(r, c);
      for (int c = 0; c < C; ++c) g.at(r, c) += self.value.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "layer_norm_rows");
  const int R = x.dim(0), C = x.dim(1);
  Tensor xhat({R, C});
  Tensor out({R, C});
  std::vector<double> inv_std(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    double m = 0.0;
    for (int c = 0; c < C; ++c) m += x.value().at(r, c);
    m /= C;
    double v = 0.0;
    for (int c = 0; c < C; ++c) v += (x.value().at(r, c) - m) * (x.value().at(r, c) - m);
    v /= C;
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < C; ++c) {
      xhat.at(r, c) = (x.value().at(r, c) - m) * is;
      out.at(r, c) = gamma.value()[static_cast<std::size_t>(c)] * xhat.at(r, c) + beta.value()[static_cast<std::size_t>(c)];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), R, C](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       double* dg = pg.requires_grad ? pg.grad_buffer().data() : nullptr;
                       double* db = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                       for (int r = 0; r < R; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (int c = 0; c < C; ++c) {
                           const double dy = self.grad.at(r, c);
                           if (dg) dg[c] += dy * xhat.at(r, c);
                           if (db) db[c] += dy;
                           const double dxh = dy * pg.value[static_cast<std::size_t>(c)];
                           m1 += dxh;
                           m2 += dxh * xhat.at(r, c);
                         }
                         if (!px.requires_grad) continue;
                         m1 /= C;
                         m2 /= C;
                         Tensor& g = px.grad_buffer();
                         for (int c = 0; c < C; ++c) {
                           const double dxh = self.grad.at(r, c) * pg.value[static_cast<std::size_t>(c)];
                           g.at(r, c) += inv_std[static_cast<std::size_t>(r)] * (dxh - m1 - xhat.at(r, c) * m2);
                         }
                       }
                     });
}

Var slice_cols(const Var& x, int begin, int end) {
  require_rank(x, 2, "slice_cols");
  const int R = x.dim(0), C = x.dim(1);
  if (begin < 0 || end > C || begin >= end) throw Error("slice_cols: bad range");
  const int K = end - begin;
  Tensor out({R, K});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < K; ++c) out.at(r, c) = x.value().at(r, begin + c);
  return make_result(std::move(out), {x}, [R, K, begin](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < K; ++c) g.at(r, begin + c) += self.grad.at(r, c);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const int R = parts[0].dim(0);
  int C = 0;
  std::vector<int> offsets;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != R) throw Error("concat_cols: row count mismatch");
    offsets.push_back(C);
    C += p.dim(1);
  }
  Tensor out({R, C});
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < parts[k].dim(1); ++c) out.at(r, offsets[k] + c) = parts[k].value().at(r, c);
  return make_result(std::move(out), parts, [offsets, R](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      Tensor& g = p.grad_buffer();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < p.value.dim(1); ++c) g.at(r, c) += self.grad.at(r, offsets[k] + c);
    }
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  require_rank(table, 2, "embedding");
  const int V = table.dim(0), D = table.dim(1);
  const int T = static_cast<int>(ids.size());
  Tensor out({T, D});
  for (int t = 0; t < T; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= V) throw Error("embedding: token id " + std::to_string(id) + " outside vocabulary");
    for (int d = 0; d < D; ++d) out.at(t, d) = table.value().at(id, d);
  }
  return make_result(std::move(out), {table}, [ids, D](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (int d = 0; d < D; ++d) g.at(ids[t], d) += self.grad.at(static_cast<int>(t), d);
  });
}

Var to_tokens(const Var& x, int n) {
  require_rank(x, 4, "to_tokens");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (n < 0 || n >= N) throw Error("to_tokens: sample index out of range");
  Tensor out({HW, C});
  const double* src = x.value().data() + static_cast<std::size_t>(n) * C * HW;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < HW; ++i) out.at(i, c) = src[static_cast<std::size_t>(c) * HW + i];
  return make_result(std::move(out), {x}, [n, C, HW](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_buffer().data() + static_cast<std::size_t>(n) * C * HW;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) g[static_cast<std::size_t>(c) * HW + i] += self.grad.at(i, c);
  });
}

Var from_tokens(const Var& t, int h, int w) {
  require_rank(t, 2, "from_tokens");
  const int HW = t.dim(0), C = t.dim(1);
  if (HW != h * w) throw Error("from_tokens: token count does not match grid");
  Tensor out({1, C, h, w});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < HW; ++i) out[static_cast<std::size_t>(c) * HW + i] = t.value().at(i, c);
  return make_result(std::move(out), {t}, [C, HW](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) g.at(i, c) += self.grad[static_cast<std::size_t>(c) * HW + i];
  });
}

// ---------------------------------------------------------------------------
// losses

Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
  require_rank(logits, 2, "cross_entropy");
  const int T = logits.dim(0), V = logits.dim(1);
  if (static_cast<int>(targets.size()) != T) throw Error("cross_entropy: target count mismatch");
  Tensor probs({T, V});
  double loss = 0.0;
  for (int t = 0; t < T; ++t) {
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= V) throw Error("cross_entropy: target id outside vocabulary");
    double mx = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < V; ++v) mx = std::max(mx, logits.value().at(t, v));
    double s = 0.0;
    for (int v = 0; v < V; ++v) {
      probs.at(t, v) = std::exp(logits.value().at(t, v) - mx);
      s += probs.at(t, v);
    }
    for (int v = 0; v < V; ++v) probs.at(t, v) /= s;
    loss += std::log(s) + mx - logits.value().at(t, y);
  }
  loss /= T;
  return make_result(Tensor({1}, loss), {logits}, [probs = std::move(probs), targets, T, V](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double d = self.grad[0] / T;
    for (int t = 0; t < T; ++t)
      for (int v = 0; v < V; ++v)
        g.at(t, v) += d * (probs.at(t, v) - (v == targets[static_cast<std::size_t>(t)] ? 1.0 : 0.0));
  });
}

Var rmse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "rmse");
  const int N = a.dim(0);
  const std::size_t per = a.value().size() / static_cast<std::size_t>(N);
  std::vector<double> rms(static_cast<std::size_t>(N));
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = a.value()[n * per + i] - b.value()[n * per + i];
      s += d * d;
    }
    rms[static_cast<std::size_t>(n)] = std::sqrt(s / static_cast<double>(per));
    total += rms[static_cast<std::size_t>(n)];
  }
  return make_result(Tensor({1}, total / N), {a, b}, [rms = std::move(rms), N, per](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (int n = 0; n < N; ++n) {
      const double r = rms[static_cast<std::size_t>(n)];
      if (r == 0.0) continue;
      const double k = self.grad[0] / (N * static_cast<double>(per) * r);
      for (std::size_t i = 0; i < per; ++i) {
        const double d = pa.value[n * per + i] - pb.value[n * per + i];
        if (ga) ga[n * per + i] += k * d;
        if (gb) gb[n * per + i] -= k * d;
      }
    }
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "l1_mean");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  return make_result(Tensor({1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double k = self.grad[0] / static_cast<double>(n);
    double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pa.value[i] - pb.value[i];
      const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) ga[i] += k * sg;
      if (gb) gb[i] -= k * sg;
    }
  });
}

}  // namespace spgim::ops
