#pragma once

// Precise ROI pooling: each output bin is the exact mean of the bilinear
// interpolant of the feature map over the bin rectangle. Feature samples sit
// at integer coordinates; reads outside the map are zero. The result is
// continuous and differentiable in both the features and the box corners.

#include <vector>

#include "srn/autograd.hpp"
#include "srn/geometry.hpp"

namespace srn {

inline constexpr int kRoiSize = 7;
inline constexpr int kRoiPositions = kRoiSize * kRoiSize;

enum class PoolMode {
  kPrecise,  // closed-form bin integral
  kSampled,  // 2 x 2 bilinear samples per bin; faster, not used for gradients
};

template <typename T>
struct RoiFeature {
  Tensor<T> block;  // (49, C), position-major: index = by * 7 + bx
  BBox box;         // in feature-map coordinates
};

/// Pool one box from a (C, H, W) map.
template <typename T>
RoiFeature<T> prroi_pool(const Tensor<T>& feature, const BBox& box, PoolMode mode = PoolMode::kPrecise);

/// Batched differentiable form. boxes: (K, 4) as (x0, y0, x1, y1) in feature
/// coordinates. Returns (K, 49, C).
template <typename T>
ag::Var<T> prroi_pool(const ag::Var<T>& feature, const ag::Var<T>& boxes, PoolMode mode = PoolMode::kPrecise);

/// Integral of the unit hat function max(0, 1 - |t|) over [a, b].
double hat_integral(double a, double b);

}  // namespace srn
