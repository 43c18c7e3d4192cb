#include "srn/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace srn {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0)) return 0.0;
  return inter / uni;
}

double iou_loss(const BBox& pred, const BBox& gt, std::array<double, 4>* grad) {
  const double ix0 = std::max(pred.x0, gt.x0), ix1 = std::min(pred.x1, gt.x1);
  const double iy0 = std::max(pred.y0, gt.y0), iy1 = std::min(pred.y1, gt.y1);
  const double iw = ix1 - ix0, ih = iy1 - iy0;
  const bool overlap = iw > 0 && ih > 0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = pred.area() + gt.area() - inter;
  const double loss = uni > 0 ? 1.0 - inter / uni : 1.0;
  if (grad) {
    grad->fill(0.0);
    if (uni > 0) {
      const double pw = pred.width(), ph = pred.height();
      // d(area)/d corner
      const double darea[4] = {-ph, -pw, ph, pw};
      double dinter[4] = {0, 0, 0, 0};
      if (overlap) {
        if (pred.x0 > gt.x0) dinter[0] = -ih;
        if (pred.y0 > gt.y0) dinter[1] = -iw;
        if (pred.x1 < gt.x1) dinter[2] = ih;
        if (pred.y1 < gt.y1) dinter[3] = iw;
      }
      for (int k = 0; k < 4; ++k) {
        const double dunion = darea[k] - dinter[k];
        (*grad)[k] = -(dinter[k] * uni - inter * dunion) / (uni * uni);
      }
    }
  }
  return loss;
}

int LabelMap::count(Label l) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), l));
}

EllipseValues ellipse_values(const BBox& gt, double px, double py) {
  const double dx = px - gt.cx(), dy = py - gt.cy();
  const double w = gt.width(), h = gt.height();
  const double ax2 = 0.25 * w, ay2 = 0.25 * h;  // inner semi-axes
  const double ax1 = 0.5 * w, ay1 = 0.5 * h;    // outer semi-axes
  return {dx * dx / (ax2 * ax2) + dy * dy / (ay2 * ay2), dx * dx / (ax1 * ax1) + dy * dy / (ay1 * ay1)};
}

LabelMap assign_labels(const BBox& gt, const GridSpec& grid) {
  SRN_CHECK(gt.has_area(), ErrorCode::kDegenerateTarget, "ground-truth box has zero width or height");
  LabelMap map{grid.size, std::vector<Label>(static_cast<size_t>(grid.count()))};
  for (int j = 0; j < grid.size; ++j)
    for (int i = 0; i < grid.size; ++i) {
      const auto e = ellipse_values(gt, grid.px(i), grid.px(j));
      Label l = Label::kIgnore;
      if (e.inner <= 1.0)
        l = Label::kPositive;
      else if (e.outer > 1.0)
        l = Label::kNegative;
      map.labels[static_cast<size_t>(j) * grid.size + i] = l;
    }
  return map;
}

RegressionTargetMap encode_regression(const BBox& gt, const GridSpec& grid) {
  const LabelMap labels = assign_labels(gt, grid);
  RegressionTargetMap out;
  out.size = grid.size;
  out.distances.resize(grid.count());
  out.valid.resize(grid.count());
  for (int j = 0; j < grid.size; ++j)
    for (int i = 0; i < grid.size; ++i) {
      const double px = grid.px(i), py = grid.px(j);
      const size_t idx = static_cast<size_t>(j) * grid.size + i;
      out.distances[idx] = {px - gt.x0, py - gt.y0, gt.x1 - px, gt.y1 - py};
      out.valid[idx] = labels.labels[idx] == Label::kPositive ? 1 : 0;
    }
  return out;
}

BBox decode_box(double px, double py, const Distances& d, bool* degenerate) {
  BBox b{px - d[0], py - d[1], px + d[2], py + d[3]};
  bool bad = false;
  if (b.x1 < b.x0) {
    b.x0 = b.x1 = 0.5 * (b.x0 + b.x1);
    bad = true;
  }
  if (b.y1 < b.y0) {
    b.y0 = b.y1 = 0.5 * (b.y0 + b.y1);
    bad = true;
  }
  if (degenerate) *degenerate = bad;
  return b;
}

}  // namespace srn
