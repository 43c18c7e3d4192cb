#pragma once

// Learned comparator between a support ROI and query ROIs. Inputs are
// position-major blocks (N, 49, C); every op is batched over N pairs.

#include "srn/config.hpp"
#include "srn/nn.hpp"
#include "srn/roi_pool.hpp"

namespace srn {

template <typename T>
struct RoiFeaturePair {
  ag::Var<T> support;  // (N, 49, C)
  ag::Var<T> query;    // (N, 49, C)
  bool aligned = false;
};

template <typename T>
struct RelationScore {
  ag::Var<T> global;  // (N); undefined when the head is disabled
  ag::Var<T> local;
  ag::Var<T> patch;
  ag::Var<T> combined;  // (N), mean of the enabled heads
};

/// 9 x 49 averaging matrix for the fixed 3/2/2 split of each 7x7 axis.
template <typename T>
Tensor<T> patch_pool_matrix();

template <typename T>
class RelationDetector {
 public:
  RelationDetector(nn::ParamStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  /// Non-local attention over the channel-concatenated pair. With
  /// `uniform_attention` every position attends equally to all positions.
  RoiFeaturePair<T> align(const RoiFeaturePair<T>& pair, bool uniform_attention = false) const;

  ag::Var<T> global_head(const RoiFeaturePair<T>& pair) const;
  ag::Var<T> local_head(const RoiFeaturePair<T>& pair) const;
  ag::Var<T> patch_head(const RoiFeaturePair<T>& pair) const;
  /// (N, 9, 9) bilinear scores between support patches (rows) and query
  /// patches (columns), before aggregation.
  ag::Var<T> patch_scores(const RoiFeaturePair<T>& pair) const;

  /// Align, then run the enabled heads.
  RelationScore<T> score(const ag::Var<T>& support, const ag::Var<T>& query, const HeadSet& heads) const;
  RelationScore<T> score(const ag::Var<T>& support, const ag::Var<T>& query) const {
    return score(support, query, heads_);
  }

  const HeadSet& heads() const { return heads_; }

 private:
  int channels_;
  int attention_dim_;
  HeadSet heads_;
  nn::Linear<T> theta_, phi_, value_, out_;
  nn::Linear<T> global1_, global2_;
  nn::Linear<T> local1_, local2_;
  nn::Linear<T> patch_embed_, bilinear_;
  ag::Var<T> patch_bias_;
  Tensor<T> patch_pool_;
  Tensor<T> position_mean_;  // (1, 49) row of 1/49
};

/// Mean of the enabled per-head scores; throws on an empty set.
template <typename T>
ag::Var<T> combine_heads(const RelationScore<T>& s, const HeadSet& heads);

}  // namespace srn
