#pragma once

// Toy five-stage backbone and the per-level correlation heads.
//
// Coordinates: stage-3 feature cell u sits at patch coordinate 8u + 7.5, so a
// patch point x maps to feature coordinate (x - 7.5) / 8. Search maps are
// 31x31; template maps are 15x15 and center-cropped to 7x7 (cells 4..10),
// which puts correlation output i at search patch coordinate 8i + 31.5.

#include <array>

#include "srn/config.hpp"
#include "srn/image.hpp"
#include "srn/nn.hpp"

namespace srn {

inline constexpr int kFeatureStride = 8;
inline constexpr double kFeatureOffset = 7.5;
inline constexpr int kSearchFeature = 31;
inline constexpr int kTemplateFeatureFull = 15;
inline constexpr int kTemplateFeature = 7;
inline constexpr int kCorrSize = kSearchFeature - kTemplateFeature + 1;  // 25

inline double patch_to_feature(double x) { return (x - kFeatureOffset) / kFeatureStride; }
inline double feature_to_patch(double f) { return f * kFeatureStride + kFeatureOffset; }
inline BBox patch_to_feature(const BBox& b) {
  return {patch_to_feature(b.x0), patch_to_feature(b.y0), patch_to_feature(b.x1), patch_to_feature(b.y1)};
}

enum class Role { kTemplate, kSearch };

template <typename T>
struct FeaturePyramid {
  Role role = Role::kSearch;
  std::array<ag::Var<T>, kNumLevels> levels;  // (C, 7, 7) template, (C, 31, 31) search
  std::array<ag::Var<T>, kNumLevels> full;    // template only: (C, 15, 15) before the crop

  int channels() const { return levels[0].dim(0); }
  int side() const { return levels[0].dim(1); }
};

template <typename T>
class Backbone {
 public:
  Backbone(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  /// patch: (3, S, S) with values in [0, 1]; S = 127 for templates, 255 for searches.
  FeaturePyramid<T> forward(const ag::Var<T>& patch, Role role) const;

 private:
  std::array<nn::Conv2d<T>, 5> stages_;
};

template <typename T>
FeaturePyramid<T> extract_pyramid(const Backbone<T>& net, const Patch& patch, Role role);

/// Shape-checked per-channel valid correlation of a search level with a
/// template level.
template <typename T>
ag::Var<T> depthwise_xcorr_level(const ag::Var<T>& search, const ag::Var<T>& templ);

template <typename T>
struct CorrelationOutputs {
  std::array<ag::Var<T>, kNumLevels> cls_corr;  // (C, 25, 25); undefined for disabled levels
  std::array<ag::Var<T>, kNumLevels> reg;       // (4, 25, 25) positive distances (l, t, r, b)
  std::vector<T> cls_weights;                   // normalized, one per enabled level
  std::vector<T> reg_weights;
  ag::Var<T> cls;  // level-aggregated (C, 25, 25)
  ag::Var<T> reg_all;  // level-aggregated (4, 25, 25)
};

template <typename T>
class Head {
 public:
  Head(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  CorrelationOutputs<T> forward(const FeaturePyramid<T>& z, const FeaturePyramid<T>& x) const;
  const LevelSet& levels() const { return levels_; }

 private:
  struct LevelHead {
    nn::Conv2d<T> cls_z, cls_x, reg_z, reg_x, tower, reg_out;
  };
  LevelSet levels_;
  std::array<LevelHead, kNumLevels> heads_;
  ag::Var<T> cls_logits_;  // aggregation logits, one per enabled level
  ag::Var<T> reg_logits_;
};

}  // namespace srn
