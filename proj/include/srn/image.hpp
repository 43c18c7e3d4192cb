#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "srn/geometry.hpp"
#include "srn/tensor.hpp"

namespace srn {

/// 8-bit interleaved RGB frame.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

  bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }
  uint8_t* px(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* px(int x, int y) const { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  bool operator==(const Image&) const = default;
};

Image read_image(const std::filesystem::path& path);  // .png, .jpg, .jpeg
void write_png(const std::filesystem::path& path, const Image& img);
/// Binary 8-bit PGM (P5); values are row-major, one byte each.
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<uint8_t>& values);

/// Square resampled crop plus the affine map back to frame coordinates:
/// frame = center + (patch - size / 2) / scale.
struct Patch {
  Tensor<float> pixels;  // (3, size, size), values in [0, 1]
  int size = 0;
  double scale = 1.0;  // patch pixels per frame pixel
  double center_x = 0, center_y = 0;
  bool padded = false;          // some samples fell outside the frame
  bool outside_frame = false;   // the crop window misses the frame entirely

  double to_frame_x(double px) const { return center_x + (px - 0.5 * size) / scale; }
  double to_frame_y(double py) const { return center_y + (py - 0.5 * size) / scale; }
  double to_patch_x(double fx) const { return (fx - center_x) * scale + 0.5 * size; }
  double to_patch_y(double fy) const { return (fy - center_y) * scale + 0.5 * size; }
  BBox to_frame(const BBox& b) const {
    return {to_frame_x(b.x0), to_frame_y(b.y0), to_frame_x(b.x1), to_frame_y(b.y1)};
  }
  BBox to_patch(const BBox& b) const {
    return {to_patch_x(b.x0), to_patch_y(b.y0), to_patch_x(b.x1), to_patch_y(b.y1)};
  }
};

inline constexpr int kTemplateSize = 127;
inline constexpr int kSearchSize = 255;

/// Context-padded crop side for a target box: sqrt((w + p)(h + p)), p = (w + h) / 2.
double context_side(const BBox& box);

/// Bilinear crop of a `side`-pixel square centered at (cx, cy), resampled to
/// `out_size`. Samples outside the frame read the per-channel frame mean.
Patch crop_patch(const Image& frame, double cx, double cy, double side, int out_size);

Patch crop_template(const Image& frame, const BBox& box);
Patch crop_search(const Image& frame, const BBox& prev_box);

}  // namespace srn
