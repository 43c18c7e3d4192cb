#include "srn/roi_pool.hpp"

#include <algorithm>
#include <cmath>

namespace srn {
namespace {

double hat(double t) { return std::max(0.0, 1.0 - std::abs(t)); }

// Antiderivative of the hat function.
double hat_cdf(double t) {
  if (t <= -1.0) return 0.0;
  if (t <= 0.0) return 0.5 * (t + 1.0) * (t + 1.0);
  if (t <= 1.0) return 1.0 - 0.5 * (1.0 - t) * (1.0 - t);
  return 1.0;
}

// Per-axis interpolation weights for one bin [b0, b1] over samples 0..n-1.
struct AxisWeights {
  int lo = 0;
  std::vector<double> w;   // integral (precise) or sample weights (sampled)
  std::vector<double> e0;  // hat(b0 - u): boundary density at b0
  std::vector<double> e1;  // hat(b1 - u)
};

AxisWeights axis_weights(double b0, double b1, int n, PoolMode mode) {
  AxisWeights a;
  const int lo = std::max(0, static_cast<int>(std::floor(b0)) - 1);
  const int hi = std::min(n - 1, static_cast<int>(std::ceil(b1)) + 1);
  a.lo = lo;
  const int len = std::max(0, hi - lo + 1);
  a.w.assign(len, 0.0);
  a.e0.assign(len, 0.0);
  a.e1.assign(len, 0.0);
  for (int k = 0; k < len; ++k) {
    const int u = lo + k;
    if (mode == PoolMode::kPrecise) {
      a.w[k] = hat_integral(b0 - u, b1 - u);
    } else {
      const double step = 0.5 * (b1 - b0);
      a.w[k] = 0.5 * (hat(b0 + 0.5 * step - u) + hat(b0 + 1.5 * step - u));
    }
    a.e0[k] = hat(b0 - u);
    a.e1[k] = hat(b1 - u);
  }
  return a;
}

struct BinGeometry {
  double x0, x1, y0, y1;
};

BinGeometry bin_of(const BBox& box, int bx, int by) {
  const double bw = box.width() / kRoiSize, bh = box.height() / kRoiSize;
  return {box.x0 + bx * bw, box.x0 + (bx + 1) * bw, box.y0 + by * bh, box.y0 + (by + 1) * bh};
}

// sum_v wy[v] sum_u wx[u] f[c][v][u]
template <typename T>
double weighted_sum(const T* plane, int w, const AxisWeights& ax, const std::vector<double>& wx,
                    const AxisWeights& ay, const std::vector<double>& wy) {
  double s = 0;
  for (size_t j = 0; j < wy.size(); ++j) {
    if (wy[j] == 0.0) continue;
    const T* row = plane + static_cast<long>(ay.lo + j) * w + ax.lo;
    double r = 0;
    for (size_t i = 0; i < wx.size(); ++i) r += wx[i] * row[i];
    s += wy[j] * r;
  }
  return s;
}

template <typename T>
void check_box(const BBox& box) {
  SRN_CHECK(box.has_area() && std::isfinite(box.x0) && std::isfinite(box.x1) && std::isfinite(box.y0) &&
                std::isfinite(box.y1),
            ErrorCode::kDegenerateTarget, "prroi_pool: box must have positive finite area");
}

template <typename T>
void pool_forward(const Tensor<T>& feature, const BBox& box, PoolMode mode, T* out) {
  check_box<T>(box);
  const int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  for (int by = 0; by < kRoiSize; ++by)
    for (int bx = 0; bx < kRoiSize; ++bx) {
      const BinGeometry g = bin_of(box, bx, by);
      const AxisWeights ax = axis_weights(g.x0, g.x1, w, mode);
      const AxisWeights ay = axis_weights(g.y0, g.y1, h, mode);
      const double norm = mode == PoolMode::kPrecise ? 1.0 / ((g.x1 - g.x0) * (g.y1 - g.y0)) : 1.0;
      T* dst = out + static_cast<size_t>(by * kRoiSize + bx) * c;
      for (int ch = 0; ch < c; ++ch)
        dst[ch] = static_cast<T>(norm * weighted_sum(feature.data() + ch * plane, w, ax, ax.w, ay, ay.w));
    }
}

// Accumulates feature and box gradients for one pooled box given the
// upstream gradient `go` laid out as (49, C).
template <typename T>
void pool_backward(const Tensor<T>& feature, const BBox& box, PoolMode mode, const T* go, T* gfeat,
                   double gbox[4]) {
  const int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  for (int by = 0; by < kRoiSize; ++by)
    for (int bx = 0; bx < kRoiSize; ++bx) {
      const BinGeometry g = bin_of(box, bx, by);
      const AxisWeights ax = axis_weights(g.x0, g.x1, w, mode);
      const AxisWeights ay = axis_weights(g.y0, g.y1, h, mode);
      const double bw = g.x1 - g.x0, bh = g.y1 - g.y0;
      const double area = bw * bh;
      const double norm = mode == PoolMode::kPrecise ? 1.0 / area : 1.0;
      const T* gbin = go + static_cast<size_t>(by * kRoiSize + bx) * c;
      if (gfeat) {
        for (int ch = 0; ch < c; ++ch) {
          const double s = norm * gbin[ch];
          if (s == 0.0) continue;
          T* gp = gfeat + ch * plane;
          for (size_t j = 0; j < ay.w.size(); ++j) {
            const double sy = s * ay.w[j];
            if (sy == 0.0) continue;
            T* row = gp + static_cast<long>(ay.lo + j) * w + ax.lo;
            for (size_t i = 0; i < ax.w.size(); ++i) row[i] += static_cast<T>(sy * ax.w[i]);
          }
        }
      }
      if (gbox && mode == PoolMode::kPrecise) {
        double d_bx0 = 0, d_bx1 = 0, d_by0 = 0, d_by1 = 0;
        for (int ch = 0; ch < c; ++ch) {
          const double up = gbin[ch];
          if (up == 0.0) continue;
          const T* fp = feature.data() + ch * plane;
          const double integral = weighted_sum(fp, w, ax, ax.w, ay, ay.w);
          const double ex0 = weighted_sum(fp, w, ax, ax.e0, ay, ay.w);
          const double ex1 = weighted_sum(fp, w, ax, ax.e1, ay, ay.w);
          const double ey0 = weighted_sum(fp, w, ax, ax.w, ay, ay.e0);
          const double ey1 = weighted_sum(fp, w, ax, ax.w, ay, ay.e1);
          const double i_a2 = integral / (area * area);
          d_bx1 += up * (ex1 / area - i_a2 * bh);
          d_bx0 += up * (-ex0 / area + i_a2 * bh);
          d_by1 += up * (ey1 / area - i_a2 * bw);
          d_by0 += up * (-ey0 / area + i_a2 * bw);
        }
        const double fx0 = static_cast<double>(bx) / kRoiSize, fx1 = static_cast<double>(bx + 1) / kRoiSize;
        const double fy0 = static_cast<double>(by) / kRoiSize, fy1 = static_cast<double>(by + 1) / kRoiSize;
        gbox[0] += d_bx0 * (1 - fx0) + d_bx1 * (1 - fx1);
        gbox[2] += d_bx0 * fx0 + d_bx1 * fx1;
        gbox[1] += d_by0 * (1 - fy0) + d_by1 * (1 - fy1);
        gbox[3] += d_by0 * fy0 + d_by1 * fy1;
      }
    }
}

}  // namespace

double hat_integral(double a, double b) { return hat_cdf(b) - hat_cdf(a); }

template <typename T>
RoiFeature<T> prroi_pool(const Tensor<T>& feature, const BBox& box, PoolMode mode) {
  SRN_CHECK(feature.rank() == 3, ErrorCode::kShapeMismatch, "prroi_pool expects a (C, H, W) map");
  RoiFeature<T> r{Tensor<T>({kRoiPositions, feature.dim(0)}), box};
  pool_forward(feature, box, mode, r.block.data());
  return r;
}

template <typename T>
ag::Var<T> prroi_pool(const ag::Var<T>& feature, const ag::Var<T>& boxes, PoolMode mode) {
  SRN_CHECK(feature.value().rank() == 3, ErrorCode::kShapeMismatch, "prroi_pool expects a (C, H, W) map");
  SRN_CHECK(boxes.value().rank() == 2 && boxes.dim(1) == 4, ErrorCode::kShapeMismatch,
            "prroi_pool expects (K, 4) boxes");
  const int k = boxes.dim(0), c = feature.dim(0);
  auto to_box = [](const Tensor<T>& b, int i) {
    return BBox{static_cast<double>(b.at(i, 0)), static_cast<double>(b.at(i, 1)), static_cast<double>(b.at(i, 2)),
                static_cast<double>(b.at(i, 3))};
  };
  Tensor<T> out({k, kRoiPositions, c});
  for (int i = 0; i < k; ++i)
    pool_forward(feature.value(), to_box(boxes.value(), i), mode, out.data() + static_cast<size_t>(i) * kRoiPositions * c);
  return ag::make_result<T>(std::move(out), {feature, boxes}, [pf = feature.node(), pb = boxes.node(), k, c, mode, to_box](ag::Node<T>& o) {
    T* gfeat = pf->requires_grad ? pf->ensure_grad().data() : nullptr;
    const bool want_box = pb->requires_grad && mode == PoolMode::kPrecise;
    for (int i = 0; i < k; ++i) {
      double gb[4] = {0, 0, 0, 0};
      pool_backward(pf->value, to_box(pb->value, i), mode, o.grad.data() + static_cast<size_t>(i) * kRoiPositions * c,
                    gfeat, want_box ? gb : nullptr);
      if (want_box) {
        auto& g = pb->ensure_grad();
        for (int j = 0; j < 4; ++j) g.at(i, j) += static_cast<T>(gb[j]);
      }
    }
  });
}

template RoiFeature<float> prroi_pool<float>(const Tensor<float>&, const BBox&, PoolMode);
template RoiFeature<double> prroi_pool<double>(const Tensor<double>&, const BBox&, PoolMode);
template ag::Var<float> prroi_pool<float>(const ag::Var<float>&, const ag::Var<float>&, PoolMode);
template ag::Var<double> prroi_pool<double>(const ag::Var<double>&, const ag::Var<double>&, PoolMode);

}  // namespace srn
