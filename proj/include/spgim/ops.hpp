#pragma once

#include <vector>

#include "spgim/autograd.hpp"

// Differentiable tensor operations. Rank-4 inputs are NCHW; "matrix" ops work
// on rank-2 (rows, cols) tensors.
namespace spgim::ops {

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);

// reductions to a scalar
Var sum(const Var& a);
Var mean(const Var& a);
Var add_scalars(const std::vector<Var>& terms, const std::vector<double>& weights);

struct ConvSpec {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dil_h = 1;
  int dil_w = 1;
};

/// Cross-correlation x[N,C,H,W] * w[O,C,kh,kw] (+ b[O]) like every DL framework.
/// `bias` may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var max_pool2d(const Var& x, int kernel, int stride, int pad);

/// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
/// Non-overlapping box average by an integer factor.
Var area_downsample(const Var& x, int factor);
Var global_avg_pool(const Var& x);

Var concat_channels(const std::vector<Var>& parts);
Var concat_batch(const std::vector<Var>& parts);
Var slice_batch(const Var& x, int n);
Var slice_channels(const Var& x, int begin, int end);

// matrix ops
Var matmul(const Var& a, const Var& b);     // a[m,k] b[k,n]
Var matmul_nt(const Var& a, const Var& b);  // a[m,k] b[n,k]^T
/// y = x W^T + b with x[m,in], W[out,in], b[out] (b may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Row softmax. With `causal` set, entry (i,j) for j > i is excluded.
Var softmax_rows(const Var& x, bool causal = false);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var slice_cols(const Var& x, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
Var embedding(const Var& table, const std::vector<int>& ids);

/// Sample n of x[N,C,H,W] as a (H*W, C) token matrix, row-major over pixels.
Var to_tokens(const Var& x, int n);
/// Inverse of to_tokens: (H*W, C) -> [1,C,H,W].
Var from_tokens(const Var& t, int h, int w);

// losses
/// Mean token cross-entropy of logits[T,V] against targets (size T).
Var cross_entropy(const Var& logits, const std::vector<int>& targets);
/// Per-sample sqrt(mean((a-b)^2)), averaged over the batch axis.
Var rmse(const Var& a, const Var& b);
/// mean |a - b| over all elements.
Var l1_mean(const Var& a, const Var& b);

}  // namespace spgim::ops
