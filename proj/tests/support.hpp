#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "spgim/autograd.hpp"
#include "spgim/image.hpp"
#include "spgim/rng.hpp"

namespace spgim::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline AlphaMatte random_matte(int h, int w, Rng& rng) {
  AlphaMatte a(h, w);
  for (double& v : a.data()) v = rng.uniform();
  return a;
}

inline ImagePlane random_image(int h, int w, Rng& rng) {
  ImagePlane a(h, w);
  for (double& v : a.data()) v = rng.uniform();
  return a;
}

/// Flat copy of a tensor's values, for equality assertions.
inline std::vector<double> flat(const Tensor& t) {
  const auto v = t.values();
  return {v.begin(), v.end()};
}

struct GradCheck {
  double worst = 0.0;    // max |analytic - numeric| / (rtol * max(|a|, |n|) + atol)
  std::size_t checked = 0;
  bool ok() const { return worst <= 1.0; }
};

/// Compares backward() of the scalar `loss()` against central differences for
/// the entries of `leaves` (every entry, or `per_leaf` randomly chosen ones).
inline GradCheck check_gradients(const std::function<Var()>& loss, std::vector<Var> leaves, double rtol = 1e-3,
                                 double atol = 1e-7, double h = 1e-6, int per_leaf = 0, std::uint64_t seed = 1) {
  for (auto& v : leaves) v.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (auto& v : leaves) analytic.push_back(v.grad().empty() ? Tensor::zeros_like(v.value()) : v.grad());

  Rng rng(seed);
  GradCheck r;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& value = leaves[l].mutable_value();
    std::vector<std::size_t> idx;
    if (per_leaf <= 0 || static_cast<std::size_t>(per_leaf) >= value.size()) {
      for (std::size_t i = 0; i < value.size(); ++i) idx.push_back(i);
    } else {
      for (int k = 0; k < per_leaf; ++k) idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(value.size()) - 1)));
    }
    for (std::size_t i : idx) {
      const double keep = value[i];
      double up, down;
      {
        NoGradGuard g;
        value[i] = keep + h;
        up = loss().value()[0];
        value[i] = keep - h;
        down = loss().value()[0];
      }
      value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / (rtol * std::max(std::abs(a), std::abs(numeric)) + atol);
      r.worst = std::max(r.worst, err);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace spgim::testing
