#pragma once

#include <string>
#include <vector>

#include "spgim/image.hpp"

namespace spgim::metrics {

/// Pixels with a non-zero value are evaluated. Null means the whole image.
using Region = const AlphaMatte*;

AlphaMatte unknown_region(const TrimapPlane& trimap);

/// Sum of |pred - gt| over the region, divided by 1000.
double sad(const AlphaMatte& pred, const AlphaMatte& gt, Region region = nullptr);
/// Mean squared difference over the region. Rejects an empty region.
double mse(const AlphaMatte& pred, const AlphaMatte& gt, Region region = nullptr);
/// Sum of (|grad pred| - |grad gt|)^2 over the region, divided by 1000. The
/// gradient is the normalized first-derivative-of-Gaussian filter pair applied
/// with replicated borders.
double grad(const AlphaMatte& pred, const AlphaMatte& gt, double sigma = 1.4, Region region = nullptr);
/// Connectivity error with thresholds {step, 2 step, ..., 1}, 4-connected
/// components, divided by 1000.
double conn(const AlphaMatte& pred, const AlphaMatte& gt, double step = 0.1, Region region = nullptr);

/// Filter support used by grad(): (2*halfsize+1)^2 taps.
int gaussian_gradient_halfsize(double sigma);
/// hx (derivative along x); hy is its transpose. Row-major, size (2h+1)^2.
std::vector<double> gaussian_gradient_kernel(double sigma);
/// Gradient magnitude sqrt(gx^2 + gy^2).
AlphaMatte gradient_magnitude(const AlphaMatte& a, double sigma);

struct MetricReport {
  double sad = 0.0;
  double mse = 0.0;
  double grad = 0.0;
  double conn = 0.0;
  std::string region = "whole-image";
};

MetricReport evaluate(const AlphaMatte& pred, const AlphaMatte& gt, Region region = nullptr);
MetricReport mean_report(const std::vector<MetricReport>& rows);

}  // namespace spgim::metrics
