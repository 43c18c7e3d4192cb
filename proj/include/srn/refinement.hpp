#pragma once

// Per-location proposal scoring (the matching map) and its fusion into the
// classification branch.

#include <array>
#include <functional>
#include <vector>

#include "srn/feature_net.hpp"
#include "srn/geometry.hpp"
#include "srn/relation.hpp"

namespace srn {

/// 25 x 25 relation scores in [0, 1]; index j * 25 + i for column i, row j.
struct MatchingScoreMap {
  int size = kCorrSize;
  std::vector<double> scores = std::vector<double>(kCorrSize * kCorrSize, 1.0);
  std::vector<uint8_t> evaluated = std::vector<uint8_t>(kCorrSize * kCorrSize, 0);
  int degenerate = 0;  // locations whose decoded box had no area

  double at(int i, int j) const { return scores[j * size + i]; }
  int evaluated_count() const;
  template <typename T>
  Tensor<T> tensor() const;  // (25, 25)
};

enum class ProposalMode { kAll, kTopK };

struct ProposalOptions {
  ProposalMode mode = ProposalMode::kAll;
  int k = 64;
};

/// Scores a batch of proposal boxes given in search-patch pixel coordinates.
using ProposalScorer = std::function<std::vector<double>(const std::vector<BBox>&)>;

/// Flat indices of the locations to evaluate: all of them, or the k highest
/// prior scores (ties broken in row-major order).
std::vector<int> select_locations(const ProposalOptions& opt, const std::vector<double>* prior, int count);

/// reg: (4, 25, 25) distances (l, t, r, b) in search-patch pixels. `prior` is
/// required in top-k mode (25 x 25, row-major).
template <typename T>
MatchingScoreMap build_matching_map(const Tensor<T>& reg, const GridSpec& grid, const ProposalScorer& scorer,
                                    const ProposalOptions& opt, const std::vector<double>* prior = nullptr);

/// Template ROI per enabled level, pooled from the full 15 x 15 template map.
template <typename T>
struct TemplateRois {
  std::array<ag::Var<T>, kNumLevels> blocks;  // (1, 49, C)
};

/// `box` is the target in template-patch pixel coordinates.
template <typename T>
TemplateRois<T> pool_template_rois(const FeaturePyramid<T>& z, const BBox& box, const LevelSet& levels);

template <typename T>
using LevelDetectors = std::array<const RelationDetector<T>*, kNumLevels>;

/// Differentiable relation score of each proposal against the template,
/// averaged over enabled levels. boxes: (K, 4) in search-patch pixels.
template <typename T>
ag::Var<T> score_proposals(const LevelDetectors<T>& detectors, const LevelSet& levels, const FeaturePyramid<T>& x,
                           const TemplateRois<T>& rois, const ag::Var<T>& boxes, const HeadSet& heads);

/// Feature-coordinate (K, 4) box tensor from patch-pixel boxes.
template <typename T>
Tensor<T> boxes_to_feature(const std::vector<BBox>& boxes);

template <typename T>
class RefineHead {
 public:
  RefineHead() = default;
  RefineHead(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  /// f: (C, 25, 25), m: (25, 25) -> m broadcast over channels.
  static ag::Var<T> refined_correlation(const ag::Var<T>& f, const ag::Var<T>& m);
  /// Logits (2, 25, 25); channel 0 background, channel 1 target.
  ag::Var<T> forward(const ag::Var<T>& f, const ag::Var<T>& m) const;
  /// Same computation restricted to `flat_index` locations: m holds one
  /// score per listed location. Returns (n, 2).
  ag::Var<T> forward_at(const ag::Var<T>& f, const std::vector<int>& flat_index, const ag::Var<T>& m) const;

 private:
  nn::Conv2d<T> conv1_, conv2_;
};

/// Target-class probability per location from (2, 25, 25) logits.
template <typename T>
std::vector<double> target_probability(const Tensor<T>& logits);

}  // namespace srn
