#include "srn/feature_net.hpp"

#include <cmath>

namespace srn {
namespace {

template <typename T>
std::vector<T> normalized(const ag::Var<T>& logits) {
  const auto& v = logits.value();
  std::vector<T> w(v.size());
  T mx = v[0];
  for (size_t i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
  T s = 0;
  for (size_t i = 0; i < v.size(); ++i) s += (w[i] = std::exp(v[i] - mx));
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  SRN_CHECK(cfg.channels > 0 && cfg.stem_channels > 0 && cfg.mid_channels > 0, ErrorCode::kInvalidArgument,
            "backbone widths must be positive");
  const int c = cfg.channels;
  const auto bb = nn::ParamGroup::kBackbone;
  stages_[0] = nn::Conv2d<T>(store, "backbone.stage1", 3, cfg.stem_channels, 3, {2, 0, 1}, rng, bb, 1);
  stages_[1] = nn::Conv2d<T>(store, "backbone.stage2", cfg.stem_channels, cfg.mid_channels, 3, {2, 0, 1}, rng, bb, 2);
  stages_[2] = nn::Conv2d<T>(store, "backbone.stage3", cfg.mid_channels, c, 3, {2, 0, 1}, rng, bb, 3);
  stages_[3] = nn::Conv2d<T>(store, "backbone.stage4", c, c, 3, {1, 2, 2}, rng, bb, 4);
  stages_[4] = nn::Conv2d<T>(store, "backbone.stage5", c, c, 3, {1, 4, 4}, rng, bb, 5);
}

template <typename T>
FeaturePyramid<T> Backbone<T>::forward(const ag::Var<T>& patch, Role role) const {
  const int expect = role == Role::kTemplate ? kTemplateSize : kSearchSize;
  require_shape(patch.value(), {3, expect, expect}, role == Role::kTemplate ? "template patch" : "search patch");
  auto x = ag::add_scalar(patch, T(-0.5));
  FeaturePyramid<T> pyr;
  pyr.role = role;
  for (int s = 0; s < 5; ++s) {
    x = ag::relu(stages_[s](x));
    if (s < 2) continue;
    const int level = s - 2;
    if (role == Role::kTemplate) {
      pyr.full[level] = x;
      pyr.levels[level] = ag::center_crop(x, kTemplateFeature);
    } else {
      pyr.levels[level] = x;
    }
  }
  return pyr;
}

template <typename T>
FeaturePyramid<T> extract_pyramid(const Backbone<T>& net, const Patch& patch, Role role) {
  const int expect = role == Role::kTemplate ? kTemplateSize : kSearchSize;
  SRN_CHECK(patch.size == expect, ErrorCode::kShapeMismatch,
            "patch size " + std::to_string(patch.size) + " does not match role size " + std::to_string(expect));
  return net.forward(ag::Var<T>::constant(patch.pixels.template cast<T>()), role);
}

template <typename T>
ag::Var<T> depthwise_xcorr_level(const ag::Var<T>& search, const ag::Var<T>& templ) {
  SRN_CHECK(search.value().rank() == 3 && templ.value().rank() == 3, ErrorCode::kShapeMismatch,
            "xcorr expects (C, H, W) inputs");
  SRN_CHECK(search.dim(0) == templ.dim(0), ErrorCode::kShapeMismatch,
            "xcorr channel mismatch: " + shape_str(search.shape()) + " vs " + shape_str(templ.shape()));
  SRN_CHECK(templ.dim(1) <= search.dim(1) && templ.dim(2) <= search.dim(2), ErrorCode::kShapeMismatch,
            "xcorr kernel larger than input");
  return ag::depthwise_xcorr(search, templ);
}

template <typename T>
Head<T>::Head(nn::ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) : levels_(cfg.levels) {
  SRN_CHECK(levels_.count() > 0, ErrorCode::kInvalidArgument, "at least one pyramid level required");
  const int c = cfg.channels, t = cfg.tower();
  for (int l : levels_.indices()) {
    const std::string p = "head.L" + std::to_string(l + 3) + ".";
    auto& h = heads_[l];
    h.cls_z = nn::Conv2d<T>(store, p + "cls_z", c, c, 1, {}, rng);
    h.cls_x = nn::Conv2d<T>(store, p + "cls_x", c, c, 1, {}, rng);
    h.reg_z = nn::Conv2d<T>(store, p + "reg_z", c, c, 1, {}, rng);
    h.reg_x = nn::Conv2d<T>(store, p + "reg_x", c, c, 1, {}, rng);
    h.tower = nn::Conv2d<T>(store, p + "reg_tower", c, t, 1, {}, rng);
    h.reg_out = nn::Conv2d<T>(store, p + "reg_out", t, 4, 1, {}, rng);
    // start near a 64-pixel box with a small initial spread
    auto& w = h.reg_out.weight.mutable_value();
    for (auto& v : w.values()) v *= T(0.1);
    h.reg_out.bias.mutable_value().fill(static_cast<T>(std::log(4.0)));
  }
  const int n = levels_.count();
  cls_logits_ = store.add("head.cls_level_logits", Tensor<T>({n}));
  reg_logits_ = store.add("head.reg_level_logits", Tensor<T>({n}));
}

template <typename T>
CorrelationOutputs<T> Head<T>::forward(const FeaturePyramid<T>& z, const FeaturePyramid<T>& x) const {
  SRN_CHECK(z.role == Role::kTemplate && x.role == Role::kSearch, ErrorCode::kInvalidArgument,
            "head expects (template, search) pyramids");
  const T inv_area = T(1) / T(kTemplateFeature * kTemplateFeature);
  CorrelationOutputs<T> out;
  std::vector<ag::Var<T>> cls_levels, reg_levels;
  for (int l : levels_.indices()) {
    const auto& h = heads_[l];
    auto cz = ag::relu(h.cls_z(z.levels[l]));
    auto cx = ag::relu(h.cls_x(x.levels[l]));
    out.cls_corr[l] = ag::scale(depthwise_xcorr_level(cx, cz), inv_area);
    auto rz = ag::relu(h.reg_z(z.levels[l]));
    auto rx = ag::relu(h.reg_x(x.levels[l]));
    auto rc = ag::scale(depthwise_xcorr_level(rx, rz), inv_area);
    auto raw = h.reg_out(ag::relu(h.tower(rc)));
    out.reg[l] = ag::scale(ag::exp(raw), T(kFeatureStride));
    cls_levels.push_back(out.cls_corr[l]);
    reg_levels.push_back(out.reg[l]);
  }
  out.cls = ag::softmax_weighted_sum(cls_levels, cls_logits_);
  out.reg_all = ag::softmax_weighted_sum(reg_levels, reg_logits_);
  out.cls_weights = normalized(cls_logits_);
  out.reg_weights = normalized(reg_logits_);
  return out;
}

template class Backbone<float>;
template class Backbone<double>;
template class Head<float>;
template class Head<double>;
template FeaturePyramid<float> extract_pyramid(const Backbone<float>&, const Patch&, Role);
template FeaturePyramid<double> extract_pyramid(const Backbone<double>&, const Patch&, Role);
template ag::Var<float> depthwise_xcorr_level(const ag::Var<float>&, const ag::Var<float>&);
template ag::Var<double> depthwise_xcorr_level(const ag::Var<double>&, const ag::Var<double>&);

}  // namespace srn
