#include <gtest/gtest.h>

#include "oracles.hpp"
#include "srn/geometry.hpp"

using namespace srn;

namespace {

oracle::Lab to_lab(Label l) {
  return l == Label::kPositive ? oracle::Lab::kPos : l == Label::kNegative ? oracle::Lab::kNeg : oracle::Lab::kIgn;
}

const GridSpec kUnit{25, 1.0, 0.0};

}  // namespace

TEST(Iou, WorkedExamples) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {3, 3, 5, 5}), 0.0);
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(oracle::raster_iou({0, 0, 2, 2}, {1, 1, 3, 3}, 0, 4, 64), 1.0 / 7.0, 1e-12);
}

TEST(Iou, ZeroAreaInputs) {
  EXPECT_EQ(iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
  EXPECT_EQ(iou({0, 0, 0, 5}, {0, 0, 2, 2}), 0.0);
}

TEST(Iou, PropertiesAgainstRaster) {
  oracle::Gen g(3);
  for (int t = 0; t < 200; ++t) {
    // Quarter-unit corners make the 4-per-unit raster exact.
    const auto q = [&] { return std::round(g.uniform(0, 12) * 4) / 4; };
    BBox a{q(), q(), q(), q()}, b{q(), q(), q(), q()};
    if (a.x1 < a.x0) std::swap(a.x0, a.x1);
    if (a.y1 < a.y0) std::swap(a.y0, a.y1);
    if (b.x1 < b.x0) std::swap(b.x0, b.x1);
    if (b.y1 < b.y0) std::swap(b.y0, b.y1);
    const double v = iou(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_NEAR(v, oracle::raster_iou(a, b, 0, 12, 4), 1e-12);
    if (a.has_area()) EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  }
}

TEST(IouLoss, WorkedExamples) {
  EXPECT_NEAR(iou_loss({0, 0, 2, 2}, {0, 0, 2, 2}), 0.0, 1e-12);
  EXPECT_NEAR(iou_loss({0, 0, 2, 2}, {1, 1, 3, 3}), 6.0 / 7.0, 1e-12);
  EXPECT_NEAR(iou_loss({0, 0, 2, 2}, {3, 3, 5, 5}), 1.0, 1e-12);
}

TEST(IouLoss, GradientMatchesFiniteDifferences) {
  oracle::Gen g(5);
  int checked = 0;
  while (checked < 300) {
    const BBox gt = g.box(0, 50, 5, 20);
    const BBox pred = BBox::from_center(gt.cx() + g.uniform(-6, 6), gt.cy() + g.uniform(-6, 6),
                                        gt.width() * g.uniform(0.6, 1.5), gt.height() * g.uniform(0.6, 1.5));
    // Stay away from coincident edges where the loss has a kink.
    const double margin = 1e-3;
    if (std::abs(pred.x0 - gt.x0) < margin || std::abs(pred.x1 - gt.x1) < margin ||
        std::abs(pred.y0 - gt.y0) < margin || std::abs(pred.y1 - gt.y1) < margin || iou(pred, gt) < 0.05)
      continue;
    std::array<double, 4> grad;
    iou_loss(pred, gt, &grad);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
      BBox up = pred, dn = pred;
      double* pu[] = {&up.x0, &up.y0, &up.x1, &up.y1};
      double* pd[] = {&dn.x0, &dn.y0, &dn.x1, &dn.y1};
      *pu[k] += h;
      *pd[k] -= h;
      const double numeric = (iou_loss(up, gt) - iou_loss(dn, gt)) / (2 * h);
      EXPECT_LT(std::abs(grad[k] - numeric) / std::max({1e-6, std::abs(numeric), std::abs(grad[k])}), 1e-4);
    }
    ++checked;
  }
}

TEST(Labels, WorkedExamples) {
  const BBox gt = BBox::from_center(12, 12, 8, 8);
  const auto map = assign_labels(gt, kUnit);
  EXPECT_EQ(map.at(12, 12), Label::kPositive);
  EXPECT_EQ(map.at(12, 15), Label::kIgnore);
  EXPECT_EQ(map.at(20, 12), Label::kNegative);
  const auto e = ellipse_values(gt, 12, 15);
  EXPECT_DOUBLE_EQ(e.inner, 9.0 / 4.0);
  EXPECT_DOUBLE_EQ(e.outer, 9.0 / 16.0);
}

TEST(Labels, BoundaryCountsAsInside) {
  const BBox gt = BBox::from_center(12, 12, 8, 8);
  const auto map = assign_labels(gt, kUnit);
  EXPECT_EQ(map.at(14, 12), Label::kPositive);  // inner value exactly 1
  EXPECT_EQ(map.at(16, 12), Label::kIgnore);    // outer value exactly 1
}

TEST(Labels, DegenerateTargetRejected) {
  try {
    assign_labels({5, 5, 5, 9}, GridSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateTarget);
  }
}

TEST(Labels, OracleEquivalenceAndPartition) {
  oracle::Gen g(11);
  for (int t = 0; t < 300; ++t) {
    const GridSpec grid{g.range(5, 30), g.uniform(1, 10), g.uniform(-5, 40)};
    const double extent = grid.px(grid.size - 1);
    const BBox gt = g.box(grid.origin - 10, extent + 10, 2, std::max(3.0, extent - grid.origin));
    const auto map = assign_labels(gt, grid);
    ASSERT_EQ(static_cast<int>(map.labels.size()), grid.count());
    for (int j = 0; j < grid.size; ++j)
      for (int i = 0; i < grid.size; ++i)
        ASSERT_EQ(to_lab(map.at(i, j)), oracle::ellipse_label(gt.x0, gt.y0, gt.x1, gt.y1, grid.px(i), grid.px(j)));
    EXPECT_EQ(map.count(Label::kPositive) + map.count(Label::kNegative) + map.count(Label::kIgnore), grid.count());
  }
}

TEST(Labels, ReflectionSymmetry) {
  oracle::Gen g(13);
  for (int t = 0; t < 100; ++t) {
    const GridSpec grid{25, 8.0, 31.5};
    const int ci = g.range(3, 21), cj = g.range(3, 21);
    const BBox gt = BBox::from_center(grid.px(ci), grid.px(cj), g.uniform(8, 120), g.uniform(8, 120));
    const auto map = assign_labels(gt, grid);
    for (int j = 0; j < 25; ++j)
      for (int i = 0; i < 25; ++i) {
        const int ri = 2 * ci - i, rj = 2 * cj - j;
        if (ri >= 0 && ri < 25) EXPECT_EQ(map.at(i, j), map.at(ri, j));
        if (rj >= 0 && rj < 25) EXPECT_EQ(map.at(i, j), map.at(i, rj));
      }
  }
}

TEST(Regression, WorkedExamples) {
  const BBox gt{10, 20, 50, 60};
  const GridSpec grid{61, 1.0, 0.0};
  const auto reg = encode_regression(gt, grid);
  const auto& d = reg.distances[40 * 61 + 30];
  EXPECT_EQ(d, (Distances{20, 20, 20, 20}));
  EXPECT_EQ(reg.distances[22 * 61 + 12], (Distances{2, 2, 38, 38}));
  EXPECT_EQ(reg.distances[30 * 61 + 10][0], 0.0);
  EXPECT_EQ(decode_box(30, 40, {20, 20, 20, 20}), gt);
}

TEST(Regression, DegenerateDecode) {
  bool flag = false;
  const BBox b = decode_box(7, 9, {0, 0, 0, 0}, &flag);
  EXPECT_EQ(b, (BBox{7, 9, 7, 9}));
  EXPECT_FALSE(b.has_area());
  flag = false;
  const BBox c = decode_box(7, 9, {-3, 1, -3, 1}, &flag);
  EXPECT_TRUE(flag);
  EXPECT_EQ(c.width(), 0.0);
  EXPECT_TRUE(c.valid());
}

TEST(Regression, RoundTripAtPositives) {
  oracle::Gen g(17);
  const GridSpec grid;
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const BBox gt = g.box(0, 255, 4, 200);
    const auto reg = encode_regression(gt, grid);
    for (int idx = 0; idx < grid.count(); ++idx) {
      if (!reg.valid[idx]) continue;
      for (double v : reg.distances[idx]) EXPECT_GT(v, 0.0);
      const BBox b = decode_box(grid.px(idx % 25), grid.px(idx / 25), reg.distances[idx]);
      worst = std::max({worst, std::abs(b.x0 - gt.x0), std::abs(b.y0 - gt.y0), std::abs(b.x1 - gt.x1),
                        std::abs(b.y1 - gt.y1)});
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(BBox, CenterSizeRoundTrip) {
  oracle::Gen g(19);
  for (int t = 0; t < 1000; ++t) {
    // Dyadic values keep the conversion exact.
    const double x = g.range(0, 4000) / 16.0, y = g.range(0, 4000) / 16.0;
    const double w = g.range(1, 4000) / 16.0, h = g.range(1, 4000) / 16.0;
    const BBox b = BBox::from_xywh(x, y, w, h);
    EXPECT_EQ(BBox::from_center(b.cx(), b.cy(), b.width(), b.height()), b);
  }
}
