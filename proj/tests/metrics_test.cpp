#include <gtest/gtest.h>

#include "spgim/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace spgim {
namespace {

using namespace metrics;
using testing::random_matte;

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

TEST(Metrics, SadHandExample) {
  AlphaMatte p(1, 2), g(1, 2);
  p.at(0, 0) = 0.5;
  p.at(0, 1) = 1.0;
  g.at(0, 1) = 1.0;
  EXPECT_DOUBLE_EQ(sad(p, g), 0.0005);
}

TEST(Metrics, MseOnesVersusZeros) {
  EXPECT_DOUBLE_EQ(mse(AlphaMatte(5, 7, 1.0), AlphaMatte(5, 7, 0.0)), 1.0);
}

TEST(Metrics, RandomPairsMatchOracles) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const AlphaMatte p = random_matte(16, 16, rng), g = random_matte(16, 16, rng);
    EXPECT_EQ(sad(p, g), testing::sad_loop(p, g));
    EXPECT_EQ(mse(p, g), testing::mse_loop(p, g));
    EXPECT_LT(rel(grad(p, g), testing::grad_separable(p, g, 1.4, 4)), 1e-6);
    EXPECT_LT(rel(conn(p, g), testing::conn_reference(p, g, 0.1)), 1e-6);
  }
}

TEST(Metrics, FilterHalfsize) {
  // sigma * sqrt(-2 ln(sqrt(2 pi) sigma 0.01)) = 3.62 at sigma 1.4
  EXPECT_EQ(gaussian_gradient_halfsize(1.4), 4);
  EXPECT_EQ(gaussian_gradient_kernel(1.4).size(), 81u);
  EXPECT_THROW(gaussian_gradient_halfsize(0.0), Error);
}

TEST(Metrics, GradStepEdgeAgainstRamp) {
  AlphaMatte step(16, 16), ramp(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      step.at(y, x) = x < 8 ? 0.0 : 1.0;
      ramp.at(y, x) = x / 15.0;
    }
  const double got = grad(step, ramp);
  EXPECT_GT(got, 0.0);
  EXPECT_LT(rel(got, testing::grad_separable(step, ramp, 1.4, 4)), 1e-9);
}

TEST(Metrics, GradZeroForConstantsAndRejectsTinyMattes) {
  EXPECT_NEAR(grad(AlphaMatte(12, 12, 0.3), AlphaMatte(12, 12, 0.8)), 0.0, 1e-20);
  EXPECT_THROW(grad(AlphaMatte(8, 8), AlphaMatte(8, 8)), Error);
  EXPECT_NO_THROW(grad(AlphaMatte(9, 9), AlphaMatte(9, 9)));
}

AlphaMatte island_gt() {
  AlphaMatte g(8, 8);
  for (int y = 1; y <= 4; ++y)
    for (int x = 1; x <= 4; ++x) g.at(y, x) = 1.0;
  for (auto [y, x] : {std::pair{5, 4}, {6, 4}, {6, 5}, {6, 6}}) g.at(y, x) = 0.6;
  return g;
}

TEST(Metrics, ConnDetachedIsland) {
  const AlphaMatte g = island_gt();
  AlphaMatte p(8, 8);
  for (int y = 1; y <= 4; ++y)
    for (int x = 1; x <= 4; ++x) p.at(y, x) = 1.0;
  p.at(6, 6) = 0.6;
  // The three bridge pixels fall out at the first threshold in the prediction
  // only: each costs 1 - (1 - 0.6). The island itself agrees on both sides.
  EXPECT_NEAR(conn(p, g), 3 * 0.6 / 1000, 1e-15);
  EXPECT_NEAR(conn(p, g), testing::conn_reference(p, g, 0.1), 1e-15);
}

TEST(Metrics, ConnTieBreaksOnColumnMajorOrder) {
  // two equal components; the left one comes first in column-major order
  AlphaMatte p(4, 5), g(4, 5);
  p.at(3, 0) = g.at(3, 0) = 0.5;
  p.at(0, 4) = g.at(0, 4) = 0.5;
  p.at(0, 0) = 0.3;
  EXPECT_NEAR(conn(p, g), testing::conn_reference(p, g, 0.1), 1e-15);
  std::vector<char> on(20, 0);
  on[3 * 5 + 0] = on[0 * 5 + 4] = 1;
  const auto keep = testing::largest_component_uf(on, 4, 5);
  EXPECT_TRUE(keep[15]);
  EXPECT_FALSE(keep[4]);
}

TEST(Metrics, TrivialZeros) {
  Rng rng(2);
  const AlphaMatte a = random_matte(16, 16, rng);
  const MetricReport r = evaluate(a, a);
  EXPECT_EQ(r.sad, 0.0);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.grad, 0.0);
  EXPECT_EQ(r.conn, 0.0);
  EXPECT_EQ(conn(AlphaMatte(6, 6, 1.0), AlphaMatte(6, 6, 1.0)), 0.0);
}

TEST(Metrics, SadAndMseAreZeroOnlyForEqualMattes) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const AlphaMatte a = random_matte(10, 10, rng);
    AlphaMatte b = a;
    b.data()[rng.uniform_int(0, 99)] += 1e-6;
    EXPECT_GT(sad(a, b), 0.0);
    EXPECT_GT(mse(a, b), 0.0);
  }
}

TEST(Metrics, AllValuesNonNegativeAndSymmetric) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const AlphaMatte p = random_matte(16, 16, rng), g = random_matte(16, 16, rng);
    const MetricReport a = evaluate(p, g), b = evaluate(g, p);
    for (double v : {a.sad, a.mse, a.grad, a.conn}) EXPECT_GE(v, 0.0);
    EXPECT_EQ(a.sad, b.sad);
    EXPECT_EQ(a.mse, b.mse);
    EXPECT_NEAR(a.grad, b.grad, 1e-15);
    // thresholding uses both mattes jointly and the penalty is |phi_p - phi_g|
    EXPECT_NEAR(a.conn, b.conn, 1e-15);
  }
}

TEST(Metrics, RegionEqualsCroppedBoundingBox) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const AlphaMatte p = random_matte(16, 16, rng), g = random_matte(16, 16, rng);
    const int y0 = rng.uniform_int(0, 10), x0 = rng.uniform_int(0, 10);
    const int y1 = rng.uniform_int(y0 + 1, 16), x1 = rng.uniform_int(x0 + 1, 16);
    AlphaMatte m(16, 16);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) m.at(y, x) = rng.uniform() < 0.7 ? 1.0 : 0.0;
    m.at(y0, x0) = 1.0;
    AlphaMatte cp(y1 - y0, x1 - x0), cg(y1 - y0, x1 - x0), cm(y1 - y0, x1 - x0);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        cp.at(y - y0, x - x0) = p.at(y, x);
        cg.at(y - y0, x - x0) = g.at(y, x);
        cm.at(y - y0, x - x0) = m.at(y, x);
      }
    EXPECT_NEAR(sad(p, g, &m), testing::sad_loop(cp, cg, &cm), 1e-15);
    EXPECT_NEAR(mse(p, g, &m), testing::mse_loop(cp, cg, &cm), 1e-15);
    // filter and component structure come from the whole image; only the
    // summation is restricted
    EXPECT_LT(rel(grad(p, g, 1.4, &m), testing::grad_separable(p, g, 1.4, 4, &m)), 1e-6);
    EXPECT_NEAR(conn(p, g, 0.1, &m), testing::conn_reference(p, g, 0.1, &m), 1e-15);
  }
}

TEST(Metrics, EmptyRegionAndShapeMismatchAreRejected) {
  const AlphaMatte a(4, 4), none(4, 4, 0.0);
  EXPECT_THROW(mse(a, a, &none), Error);
  EXPECT_THROW(sad(a, AlphaMatte(4, 5)), Error);
  EXPECT_THROW(conn(a, AlphaMatte(5, 4)), Error);
  EXPECT_THROW(conn(a, a, 1.0), Error);
  const AlphaMatte wrong(3, 3, 1.0);
  EXPECT_THROW(sad(a, a, &wrong), Error);
}

TEST(Metrics, SadLinearMseQuadraticInPerturbation) {
  Rng rng(6);
  const AlphaMatte g = random_matte(16, 16, rng);
  AlphaMatte dir(16, 16);
  for (double& v : dir.data()) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const auto shifted = [&](double eps) {
    AlphaMatte p = g;
    for (std::size_t i = 0; i < p.data().size(); ++i) p.data()[i] += eps * dir.data()[i];
    return p;
  };
  const double eps = 1e-3;
  EXPECT_NEAR(sad(shifted(2 * eps), g) / sad(shifted(eps), g), 2.0, 1e-9);
  EXPECT_NEAR(mse(shifted(2 * eps), g) / mse(shifted(eps), g), 4.0, 1e-9);
}

TEST(Metrics, UnknownRegionAndReports) {
  TrimapPlane t(2, 2, TrimapLabel::kBackground);
  t.at(0, 1) = static_cast<std::uint8_t>(TrimapLabel::kUnknown);
  t.at(1, 1) = static_cast<std::uint8_t>(TrimapLabel::kForeground);
  const AlphaMatte u = unknown_region(t);
  EXPECT_EQ(u.data(), (std::vector<double>{0, 1, 0, 0}));

  Rng rng(7);
  const AlphaMatte p = random_matte(12, 12, rng), g = random_matte(12, 12, rng);
  AlphaMatte m(12, 12, 1.0);
  EXPECT_EQ(evaluate(p, g, &m).region, "unknown-only");
  EXPECT_EQ(evaluate(p, g).region, "whole-image");

  MetricReport a, b;
  a.sad = 1;
  a.conn = 4;
  b.sad = 3;
  b.mse = 2;
  const MetricReport mean = mean_report({a, b});
  EXPECT_EQ(mean.sad, 2.0);
  EXPECT_EQ(mean.mse, 1.0);
  EXPECT_EQ(mean.conn, 2.0);
}

}  // namespace
}  // namespace spgim
