#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "srn/common.hpp"

namespace srn {

/// Axis-aligned box in continuous pixel coordinates, corner form. Pixel i
/// covers [i, i + 1), so its center sits at i + 0.5.
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  /// OTB convention: top-left corner plus size.
  static BBox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double area() const { return width() * height(); }
  bool valid() const { return x1 >= x0 && y1 >= y0; }
  bool has_area() const { return x1 > x0 && y1 > y0; }

  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

/// 1 - IoU. When `grad` is given it receives d(loss)/d(x0, y0, x1, y1) of
/// `pred`; at configurations where an intersection edge coincides with a
/// box edge the one-sided derivative that keeps `gt` fixed is reported.
double iou_loss(const BBox& pred, const BBox& gt, std::array<double, 4>* grad = nullptr);

/// Square grid of score-map locations inside a search patch.
struct GridSpec {
  int size = 25;
  double stride = 8.0;
  double origin = 31.5;

  /// Centered in a square patch of side `patch_size`.
  static GridSpec centered(int size, double stride, double patch_size) {
    return {size, stride, 0.5 * (patch_size - stride * (size - 1))};
  }
  double px(int i) const { return origin + stride * i; }
  int count() const { return size * size; }
};

enum class Label : int8_t { kNegative = 0, kPositive = 1, kIgnore = -1 };

/// Row-major S x S labels; index = j * S + i where i runs along x.
struct LabelMap {
  int size = 0;
  std::vector<Label> labels;

  Label at(int i, int j) const { return labels[static_cast<size_t>(j) * size + i]; }
  int count(Label l) const;
};

/// Normalized ellipse values (<= 1 means inside) for the inner and outer ellipse.
struct EllipseValues {
  double inner;  // semi-axes (w/4, h/4)
  double outer;  // semi-axes (w/2, h/2)
};
EllipseValues ellipse_values(const BBox& gt, double px, double py);

LabelMap assign_labels(const BBox& gt, const GridSpec& grid);

using Distances = std::array<double, 4>;  // (left, top, right, bottom)

struct RegressionTargetMap {
  int size = 0;
  std::vector<Distances> distances;  // index = j * S + i
  std::vector<uint8_t> valid;        // POSITIVE locations
};

RegressionTargetMap encode_regression(const BBox& gt, const GridSpec& grid);

/// Inverse of the distance encoding at anchor (px, py). If any resulting
/// extent is negative the box is collapsed to zero size on that axis and
/// `degenerate` (when given) is set.
BBox decode_box(double px, double py, const Distances& d, bool* degenerate = nullptr);

}  // namespace srn
