#include "srn/relation.hpp"

#include <cmath>

namespace srn {
namespace {

constexpr int kSplit[4] = {0, 3, 5, 7};  // patch boundaries along each axis

template <typename T>
ag::Var<T> flatten_scores(const ag::Var<T>& x) {
  return ag::reshape(x, {x.dim(0)});
}

}  // namespace

template <typename T>
Tensor<T> patch_pool_matrix() {
  Tensor<T> m({9, kRoiPositions});
  for (int py = 0; py < 3; ++py)
    for (int px = 0; px < 3; ++px) {
      const int row = py * 3 + px;
      const int area = (kSplit[py + 1] - kSplit[py]) * (kSplit[px + 1] - kSplit[px]);
      for (int y = kSplit[py]; y < kSplit[py + 1]; ++y)
        for (int x = kSplit[px]; x < kSplit[px + 1]; ++x) m.at(row, y * kRoiSize + x) = T(1) / T(area);
    }
  return m;
}

template <typename T>
RelationDetector<T>::RelationDetector(nn::ParamStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                      Rng& rng)
    : channels_(cfg.channels), attention_dim_(cfg.attention_dim), heads_(cfg.heads) {
  SRN_CHECK(heads_.count() > 0, ErrorCode::kInvalidArgument, "relation head set must be non-empty");
  const int c = cfg.channels, d = cfg.attention_dim;
  theta_ = nn::Linear<T>(store, prefix + ".align.theta", 2 * c, d, rng, true, 1.0);
  phi_ = nn::Linear<T>(store, prefix + ".align.phi", 2 * c, d, rng, true, 1.0);
  value_ = nn::Linear<T>(store, prefix + ".align.value", c, d, rng, true, 1.0);
  out_ = nn::Linear<T>(store, prefix + ".align.out", d, c, rng, true, 0.1);
  if (heads_.has(RelationHead::kGlobal)) {
    global1_ = nn::Linear<T>(store, prefix + ".global.fc1", 2 * c, cfg.global_hidden, rng);
    global2_ = nn::Linear<T>(store, prefix + ".global.fc2", cfg.global_hidden, 1, rng, true, 1.0);
  }
  if (heads_.has(RelationHead::kLocal)) {
    local1_ = nn::Linear<T>(store, prefix + ".local.conv1", 2 * c, cfg.local_hidden, rng);
    local2_ = nn::Linear<T>(store, prefix + ".local.conv2", cfg.local_hidden, 1, rng, true, 1.0);
  }
  if (heads_.has(RelationHead::kPatch)) {
    patch_embed_ = nn::Linear<T>(store, prefix + ".patch.embed", c, cfg.patch_embed, rng);
    bilinear_ = nn::Linear<T>(store, prefix + ".patch.bilinear", cfg.patch_embed, cfg.patch_embed, rng, false,
                              1.0);
    patch_bias_ = store.add(prefix + ".patch.bias", Tensor<T>({1}));
  }
  patch_pool_ = patch_pool_matrix<T>();
  position_mean_ = Tensor<T>({1, kRoiPositions}, T(1) / T(kRoiPositions));
}

template <typename T>
RoiFeaturePair<T> RelationDetector<T>::align(const RoiFeaturePair<T>& pair, bool uniform_attention) const {
  SRN_CHECK(!pair.aligned, ErrorCode::kState, "pair is already aligned");
  require_shape(pair.query.value(), pair.support.shape(), "relation pair");
  SRN_CHECK(pair.support.value().rank() == 3 && pair.support.dim(1) == kRoiPositions &&
                pair.support.dim(2) == channels_,
            ErrorCode::kShapeMismatch, "relation input must be (N, 49, C), got " + shape_str(pair.support.shape()));
  const int n = pair.support.dim(0);
  ag::Var<T> attn;
  if (uniform_attention) {
    attn = ag::Var<T>::constant(Tensor<T>({n, kRoiPositions, kRoiPositions}, T(1) / T(kRoiPositions)));
  } else {
    auto x = ag::concat_last(pair.support, pair.query);
    auto logits = ag::bmm_nt(theta_(x), phi_(x));
    attn = ag::softmax_lastdim(ag::scale(logits, T(1) / std::sqrt(T(attention_dim_))));
  }
  RoiFeaturePair<T> out;
  out.support = ag::add(pair.support, out_(ag::bmm(attn, value_(pair.support))));
  out.query = ag::add(pair.query, out_(ag::bmm(attn, value_(pair.query))));
  out.aligned = true;
  return out;
}

template <typename T>
ag::Var<T> RelationDetector<T>::global_head(const RoiFeaturePair<T>& pair) const {
  SRN_CHECK(global1_.weight.defined(), ErrorCode::kState, "global head not configured");
  const int n = pair.support.dim(0), c = pair.support.dim(2);
  auto gs = ag::reshape(ag::pool_positions(pair.support, position_mean_), {n, c});
  auto gq = ag::reshape(ag::pool_positions(pair.query, position_mean_), {n, c});
  auto h = ag::relu(global1_(ag::concat_last(gs, gq)));
  return ag::sigmoid(flatten_scores(global2_(h)));
}

template <typename T>
ag::Var<T> RelationDetector<T>::local_head(const RoiFeaturePair<T>& pair) const {
  SRN_CHECK(local1_.weight.defined(), ErrorCode::kState, "local head not configured");
  auto x = ag::concat_last(pair.support, pair.query);
  auto per_position = local2_(ag::relu(local1_(x)));  // (N, 49, 1)
  return ag::sigmoid(flatten_scores(ag::pool_positions(per_position, position_mean_)));
}

template <typename T>
ag::Var<T> RelationDetector<T>::patch_scores(const RoiFeaturePair<T>& pair) const {
  SRN_CHECK(patch_embed_.weight.defined(), ErrorCode::kState, "patch head not configured");
  auto es = ag::relu(patch_embed_(ag::pool_positions(pair.support, patch_pool_)));  // (N, 9, E)
  auto eq = ag::relu(patch_embed_(ag::pool_positions(pair.query, patch_pool_)));
  return ag::bmm_nt(bilinear_(es), eq);
}

template <typename T>
ag::Var<T> RelationDetector<T>::patch_head(const RoiFeaturePair<T>& pair) const {
  auto s = patch_scores(pair);
  const int n = s.dim(0);
  auto flat = ag::reshape(s, {n, 81, 1});
  Tensor<T> mean81({1, 81}, T(1) / T(81));
  auto m = ag::reshape(ag::pool_positions(flat, mean81), {n, 1});
  auto unit = ag::Var<T>::constant(Tensor<T>({1, 1}, T(1)));
  return ag::sigmoid(flatten_scores(ag::linear(m, unit, patch_bias_)));
}

template <typename T>
ag::Var<T> combine_heads(const RelationScore<T>& s, const HeadSet& heads) {
  SRN_CHECK(heads.count() > 0, ErrorCode::kInvalidArgument, "relation head set must be non-empty");
  ag::Var<T> acc;
  auto push = [&](const ag::Var<T>& v) { acc = acc.defined() ? ag::add(acc, v) : v; };
  if (heads.has(RelationHead::kGlobal)) push(s.global);
  if (heads.has(RelationHead::kLocal)) push(s.local);
  if (heads.has(RelationHead::kPatch)) push(s.patch);
  return heads.count() == 1 ? acc : ag::scale(acc, T(1) / T(heads.count()));
}

template <typename T>
RelationScore<T> RelationDetector<T>::score(const ag::Var<T>& support, const ag::Var<T>& query,
                                            const HeadSet& heads) const {
  SRN_CHECK(heads.count() > 0, ErrorCode::kInvalidArgument, "relation head set must be non-empty");
  for (int h = 0; h < kNumHeads; ++h)
    SRN_CHECK(!heads.on[h] || heads_.on[h], ErrorCode::kInvalidArgument,
              "head subset " + heads.str() + " not available in " + heads_.str());
  auto pair = align({support, query, false});
  RelationScore<T> s;
  if (heads.has(RelationHead::kGlobal)) s.global = global_head(pair);
  if (heads.has(RelationHead::kLocal)) s.local = local_head(pair);
  if (heads.has(RelationHead::kPatch)) s.patch = patch_head(pair);
  s.combined = combine_heads(s, heads);
  return s;
}

template Tensor<float> patch_pool_matrix<float>();
template Tensor<double> patch_pool_matrix<double>();
template class RelationDetector<float>;
template class RelationDetector<double>;
template ag::Var<float> combine_heads(const RelationScore<float>&, const HeadSet&);
template ag::Var<double> combine_heads(const RelationScore<double>&, const HeadSet&);

}  // namespace srn
