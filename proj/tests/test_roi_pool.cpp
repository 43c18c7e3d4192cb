#include <gtest/gtest.h>

#include "oracles.hpp"
#include "srn/roi_pool.hpp"

using namespace srn;
using V = ag::Var<double>;

namespace {

/// Exact integral of the interpolant over each unit cell: the mean of its
/// four corner samples. Cells outside the sample grid read zero.
Tensor<double> cell_means(const Tensor<double>& f) {
  const int C = f.dim(0), H = f.dim(1), W = f.dim(2);
  Tensor<double> out({C, H - 1, W - 1});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x + 1 < W; ++x)
        out.at(c, y, x) = 0.25 * (f.at(c, y, x) + f.at(c, y + 1, x) + f.at(c, y, x + 1) + f.at(c, y + 1, x + 1));
  return out;
}

V boxes_var(const std::vector<BBox>& boxes) {
  Tensor<double> t({static_cast<int>(boxes.size()), 4});
  for (size_t i = 0; i < boxes.size(); ++i) {
    t.at(i, 0) = boxes[i].x0;
    t.at(i, 1) = boxes[i].y0;
    t.at(i, 2) = boxes[i].x1;
    t.at(i, 3) = boxes[i].y1;
  }
  return V::leaf(t, true);
}

}  // namespace

TEST(PrRoi, HatIntegral) {
  EXPECT_NEAR(hat_integral(-1, 1), 1.0, 1e-15);
  EXPECT_NEAR(hat_integral(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(hat_integral(-0.5, 0.5), 0.75, 1e-15);
  EXPECT_NEAR(hat_integral(2, 3), 0.0, 1e-15);
}

TEST(PrRoi, ConstantFieldGivesConstantBins) {
  oracle::Gen g(1);
  Tensor<double> f({3, 20, 20});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 400; ++i) f[c * 400 + i] = 0.5 + c;
  for (int t = 0; t < 100; ++t) {
    const BBox b = g.box(0, 19, 0.2, 12);  // inside the sample grid
    const auto r = prroi_pool(f, b);
    for (int p = 0; p < 49; ++p)
      for (int c = 0; c < 3; ++c) ASSERT_NEAR(r.block.at(p, c), 0.5 + c, 1e-12);
  }
}

TEST(PrRoi, IntegerAlignedBoxIsAveragePooling) {
  oracle::Gen g(2);
  const auto f = g.tensor<double>({4, 31, 31});
  const auto cells = cell_means(f);
  for (int k = 1; k <= 4; ++k) {
    const int x0 = g.range(0, 30 - 7 * k), y0 = g.range(0, 30 - 7 * k);
    const auto r = prroi_pool(f, BBox{double(x0), double(y0), double(x0 + 7 * k), double(y0 + 7 * k)});
    for (int by = 0; by < 7; ++by)
      for (int bx = 0; bx < 7; ++bx)
        for (int c = 0; c < 4; ++c) {
          double s = 0;
          for (int v = 0; v < k; ++v)
            for (int u = 0; u < k; ++u) s += cells.at(c, y0 + by * k + v, x0 + bx * k + u);
          ASSERT_NEAR(r.block.at(by * 7 + bx, c), s / (k * k), 1e-5);
        }
  }
}

TEST(PrRoi, MatchesQuadratureOracle) {
  oracle::Gen g(3);
  const auto f = g.tensor<double>({3, 12, 14});
  for (int t = 0; t < 60; ++t) {
    const BBox b = g.box(-3, 16, 0.3, 10);  // may cross the border
    const auto r = prroi_pool(f, b);
    const auto ref = oracle::prroi_quadrature(f, b);
    for (size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(r.block[i], ref[i], 1e-9);
  }
}

TEST(PrRoi, ZeroAreaBoxRejected) {
  Tensor<double> f({1, 5, 5}, 1.0);
  EXPECT_THROW(prroi_pool(f, BBox{1, 1, 1, 3}), Error);
}

TEST(PrRoi, BatchedFormMatchesSingleBox) {
  oracle::Gen g(4);
  const auto f = g.tensor<double>({5, 10, 10});
  const std::vector<BBox> boxes{g.box(0, 9, 1, 6), g.box(0, 9, 1, 6), g.box(-2, 11, 1, 8)};
  const auto out = prroi_pool(V::constant(f), boxes_var(boxes));
  ASSERT_EQ(out.shape(), (Shape{3, 49, 5}));
  for (size_t k = 0; k < boxes.size(); ++k) {
    const auto r = prroi_pool(f, boxes[k]);
    for (int i = 0; i < 49 * 5; ++i) ASSERT_DOUBLE_EQ(out.value()[k * 245 + i], r.block[i]);
  }
}

TEST(PrRoi, BoxGradientMatchesFiniteDifferences) {
  oracle::Gen g(5);
  const auto f = V::leaf(g.tensor<double>({3, 12, 12}), true);
  for (int t = 0; t < 20; ++t) {
    auto boxes = boxes_var({g.box(0.3, 10.7, 1.3, 8)});
    oracle::Gen r(t);
    const auto weights = V::constant(r.tensor<double>({1, 49, 3}));
    const auto fn = [&] { return ag::sum(ag::mul(prroi_pool(f, boxes), weights)); };
    EXPECT_LT(oracle::grad_check(boxes, fn, 1e-3, 1e-3), 1e-3);
    EXPECT_LT(oracle::grad_check(f, fn, 1e-5, 1e-3), 1e-6);
  }
}

TEST(PrRoi, TranslationEquivariance) {
  oracle::Gen g(6);
  const auto f = g.tensor<double>({2, 20, 20});
  Tensor<double> shifted({2, 20, 20});
  const int dx = 3, dy = 2;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x)
        shifted.at(c, y, x) = (x - dx >= 0 && y - dy >= 0) ? f.at(c, y - dy, x - dx) : 0.0;
  for (int t = 0; t < 30; ++t) {
    const BBox b = g.box(1, 14, 1, 8);
    const auto a = prroi_pool(f, b);
    const auto s = prroi_pool(shifted, BBox{b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy});
    for (size_t i = 0; i < a.block.size(); ++i) ASSERT_NEAR(a.block[i], s.block[i], 1e-10);
  }
}

TEST(PrRoi, LinearInFeatures) {
  oracle::Gen g(7);
  const auto a = g.tensor<double>({2, 9, 9}), b = g.tensor<double>({2, 9, 9});
  Tensor<double> sum({2, 9, 9});
  for (size_t i = 0; i < sum.size(); ++i) sum[i] = 2 * a[i] - 3 * b[i];
  const BBox box{0.7, 1.3, 6.2, 7.9};
  const auto ra = prroi_pool(a, box), rb = prroi_pool(b, box), rs = prroi_pool(sum, box);
  for (size_t i = 0; i < rs.block.size(); ++i) ASSERT_NEAR(rs.block[i], 2 * ra.block[i] - 3 * rb.block[i], 1e-10);
}

TEST(PrRoi, ContinuousUnderBoxSweep) {
  oracle::Gen g(8);
  const auto f = g.tensor<double>({2, 12, 12});
  Tensor<double> prev;
  double worst = 0;
  for (int s = 0; s <= 100; ++s) {
    const double x0 = 2.0 + s / 100.0;
    const auto r = prroi_pool(f, BBox{x0, 2.5, x0 + 5.0, 8.0});
    if (!prev.empty())
      for (size_t i = 0; i < r.block.size(); ++i) worst = std::max(worst, std::abs(r.block[i] - prev[i]));
    prev = r.block;
  }
  // Per-step change bounded by a Lipschitz multiple of the 0.01 step.
  EXPECT_LT(worst, 0.01 * 8);
}

TEST(PrRoi, SampledModeApproximatesPrecise) {
  oracle::Gen g(9);
  Tensor<double> f({1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.at(0, y, x) = std::sin(0.3 * x) + std::cos(0.2 * y);
  const BBox b{1.2, 2.1, 13.7, 14.4};
  const auto p = prroi_pool(f, b, PoolMode::kPrecise), s = prroi_pool(f, b, PoolMode::kSampled);
  for (size_t i = 0; i < p.block.size(); ++i) EXPECT_NEAR(p.block[i], s.block[i], 0.05);
}
