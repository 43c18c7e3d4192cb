#include "srn/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace srn {

int MatchingScoreMap::evaluated_count() const {
  return static_cast<int>(std::count(evaluated.begin(), evaluated.end(), uint8_t{1}));
}

template <typename T>
Tensor<T> MatchingScoreMap::tensor() const {
  Tensor<T> t({size, size});
  for (size_t i = 0; i < scores.size(); ++i) t[i] = static_cast<T>(scores[i]);
  return t;
}

std::vector<int> select_locations(const ProposalOptions& opt, const std::vector<double>* prior, int count) {
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  if (opt.mode == ProposalMode::kAll) return idx;
  SRN_CHECK(prior != nullptr && static_cast<int>(prior->size()) == count, ErrorCode::kInvalidArgument,
            "top-k proposal mode needs a prior score per location");
  SRN_CHECK(opt.k > 0, ErrorCode::kInvalidArgument, "top-k needs k > 0");
  const int k = std::min(opt.k, count);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return (*prior)[a] > (*prior)[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
MatchingScoreMap build_matching_map(const Tensor<T>& reg, const GridSpec& grid, const ProposalScorer& scorer,
                                    const ProposalOptions& opt, const std::vector<double>* prior) {
  require_shape(reg, {4, grid.size, grid.size}, "regression map");
  MatchingScoreMap map;
  map.size = grid.size;
  map.scores.assign(grid.count(), 1.0);
  map.evaluated.assign(grid.count(), 0);
  const size_t plane = static_cast<size_t>(grid.count());

  std::vector<int> locs;
  std::vector<BBox> boxes;
  for (int flat : select_locations(opt, prior, grid.count())) {
    const int i = flat % grid.size, j = flat / grid.size;
    Distances d{};
    for (int k = 0; k < 4; ++k) d[k] = static_cast<double>(reg[k * plane + flat]);
    bool degenerate = false;
    const BBox b = decode_box(grid.px(i), grid.px(j), d, &degenerate);
    map.evaluated[flat] = 1;
    if (degenerate || !b.has_area() || !std::isfinite(b.area())) {
      map.scores[flat] = 0.0;
      ++map.degenerate;
      continue;
    }
    locs.push_back(flat);
    boxes.push_back(b);
  }
  if (!boxes.empty()) {
    const auto s = scorer(boxes);
    SRN_CHECK(s.size() == boxes.size(), ErrorCode::kShapeMismatch, "scorer returned the wrong number of scores");
    for (size_t n = 0; n < locs.size(); ++n) map.scores[locs[n]] = std::clamp(s[n], 0.0, 1.0);
  }
  return map;
}

template <typename T>
TemplateRois<T> pool_template_rois(const FeaturePyramid<T>& z, const BBox& box, const LevelSet& levels) {
  SRN_CHECK(z.role == Role::kTemplate, ErrorCode::kInvalidArgument, "template ROIs need a template pyramid");
  SRN_CHECK(box.has_area(), ErrorCode::kDegenerateTarget, "template box has zero area");
  const BBox fb = patch_to_feature(box);
  Tensor<T> b({1, 4}, std::vector<T>{static_cast<T>(fb.x0), static_cast<T>(fb.y0), static_cast<T>(fb.x1),
                                     static_cast<T>(fb.y1)});
  auto boxes = ag::Var<T>::constant(std::move(b));
  TemplateRois<T> rois;
  for (int l : levels.indices()) {
    SRN_CHECK(z.full[l].defined(), ErrorCode::kState, "template pyramid lacks the full-resolution level");
    rois.blocks[l] = prroi_pool(z.full[l], boxes);
  }
  return rois;
}

template <typename T>
Tensor<T> boxes_to_feature(const std::vector<BBox>& boxes) {
  Tensor<T> t({static_cast<int>(boxes.size()), 4});
  for (size_t k = 0; k < boxes.size(); ++k) {
    const BBox f = patch_to_feature(boxes[k]);
    t[k * 4 + 0] = static_cast<T>(f.x0);
    t[k * 4 + 1] = static_cast<T>(f.y0);
    t[k * 4 + 2] = static_cast<T>(f.x1);
    t[k * 4 + 3] = static_cast<T>(f.y1);
  }
  return t;
}

template <typename T>
ag::Var<T> score_proposals(const LevelDetectors<T>& detectors, const LevelSet& levels, const FeaturePyramid<T>& x,
                           const TemplateRois<T>& rois, const ag::Var<T>& boxes, const HeadSet& heads) {
  SRN_CHECK(x.role == Role::kSearch, ErrorCode::kInvalidArgument, "proposals are pooled from a search pyramid");
  SRN_CHECK(boxes.value().rank() == 2 && boxes.dim(1) == 4, ErrorCode::kShapeMismatch, "boxes must be (K, 4)");
  const int k = boxes.dim(0);
  const std::vector<int> repeat(k, 0);
  ag::Var<T> acc;
  for (int l : levels.indices()) {
    SRN_CHECK(detectors[l] != nullptr && rois.blocks[l].defined(), ErrorCode::kState,
              "missing relation detector or template ROI for level " + std::to_string(l + 3));
    auto query = prroi_pool(x.levels[l], boxes);
    auto support = ag::index_select(rois.blocks[l], repeat);
    auto r = detectors[l]->score(support, query, heads).combined;
    acc = acc.defined() ? ag::add(acc, r) : r;
  }
  return levels.count() == 1 ? acc : ag::scale(acc, T(1) / T(levels.count()));
}

template <typename T>
RefineHead<T>::RefineHead(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  conv1_ = nn::Conv2d<T>(store, "refine.conv1", cfg.channels, cfg.channels, 1, {}, rng);
  conv2_ = nn::Conv2d<T>(store, "refine.conv2", cfg.channels, 2, 1, {}, rng);
  for (auto& v : conv2_.weight.mutable_value().values()) v *= T(0.5);
}

template <typename T>
ag::Var<T> RefineHead<T>::refined_correlation(const ag::Var<T>& f, const ag::Var<T>& m) {
  SRN_CHECK(f.value().rank() == 3 && m.value().rank() == 2 && m.dim(0) == f.dim(1) && m.dim(1) == f.dim(2),
            ErrorCode::kShapeMismatch,
            "refine: correlation " + shape_str(f.shape()) + " vs matching map " + shape_str(m.shape()));
  return ag::mul_channel_broadcast(f, m);
}

template <typename T>
ag::Var<T> RefineHead<T>::forward(const ag::Var<T>& f, const ag::Var<T>& m) const {
  return conv2_(ag::relu(conv1_(refined_correlation(f, m))));
}

template <typename T>
ag::Var<T> RefineHead<T>::forward_at(const ag::Var<T>& f, const std::vector<int>& flat_index,
                                     const ag::Var<T>& m) const {
  const int c = f.dim(0);
  auto w1 = ag::reshape(conv1_.weight, {conv1_.weight.dim(0), c});
  auto w2 = ag::reshape(conv2_.weight, {2, conv2_.weight.dim(1)});
  auto rows = ag::mul_rows(ag::gather_positions(f, flat_index), m);
  return ag::linear(ag::relu(ag::linear(rows, w1, conv1_.bias)), w2, conv2_.bias);
}

template <typename T>
std::vector<double> target_probability(const Tensor<T>& logits) {
  SRN_CHECK(logits.rank() == 3 && logits.dim(0) == 2, ErrorCode::kShapeMismatch, "logits must be (2, H, W)");
  const size_t hw = static_cast<size_t>(logits.dim(1)) * logits.dim(2);
  std::vector<double> p(hw);
  for (size_t i = 0; i < hw; ++i) {
    const double d = static_cast<double>(logits[i]) - static_cast<double>(logits[hw + i]);
    p[i] = 1.0 / (1.0 + std::exp(d));
  }
  return p;
}

#define SRN_REFINE_INSTANTIATE(T)                                                                               \
  template Tensor<T> MatchingScoreMap::tensor<T>() const;                                                       \
  template MatchingScoreMap build_matching_map(const Tensor<T>&, const GridSpec&, const ProposalScorer&,        \
                                               const ProposalOptions&, const std::vector<double>*);             \
  template struct TemplateRois<T>;                                                                              \
  template TemplateRois<T> pool_template_rois(const FeaturePyramid<T>&, const BBox&, const LevelSet&);          \
  template Tensor<T> boxes_to_feature<T>(const std::vector<BBox>&);                                             \
  template ag::Var<T> score_proposals(const LevelDetectors<T>&, const LevelSet&, const FeaturePyramid<T>&,      \
                                      const TemplateRois<T>&, const ag::Var<T>&, const HeadSet&);               \
  template class RefineHead<T>;                                                                                 \
  template std::vector<double> target_probability(const Tensor<T>&);

SRN_REFINE_INSTANTIATE(float)
SRN_REFINE_INSTANTIATE(double)

}  // namespace srn
