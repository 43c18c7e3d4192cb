#include "srn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace srn {
namespace {

const char* episode_name(EpisodeMode m) { return m == EpisodeMode::kNaive ? "naive" : "contrastive"; }

EpisodeMode parse_episode(const std::string& s) {
  if (s == "naive") return EpisodeMode::kNaive;
  SRN_CHECK(s == "contrastive", ErrorCode::kParse, "unknown episode mode '" + s + "'");
  return EpisodeMode::kContrastive;
}

int usable_frames(const Sequence& s, int frames_limit) {
  return frames_limit > 0 ? std::min(frames_limit, s.size()) : s.size();
}

std::vector<int> sample_without_replacement(std::vector<int> pool, int k, Rng& rng) {
  k = std::min<int>(k, static_cast<int>(pool.size()));
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

// ---- config --------------------------------------------------------------

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"epochs", c.epochs},
       {"steps_per_epoch", c.steps_per_epoch},
       {"batch_size", c.batch_size},
       {"max_positives", c.max_positives},
       {"max_negatives", c.max_negatives},
       {"relation_pairs", c.relation_pairs},
       {"warmup_start_lr", c.warmup_start_lr},
       {"peak_lr", c.peak_lr},
       {"final_lr", c.final_lr},
       {"warmup_epochs", c.warmup_epochs},
       {"backbone_release_epoch", c.backbone_release_epoch},
       {"backbone_lr_factor", c.backbone_lr_factor},
       {"frozen_stages", c.frozen_stages},
       {"weight_decay", c.weight_decay},
       {"momentum", c.momentum},
       {"online_hnm_epoch", c.online_hnm_epoch},
       {"offline_hnm_epoch", c.offline_hnm_epoch},
       {"hard_negative_mining", c.hard_negative_mining},
       {"offline_hnm_prob", c.offline_hnm_prob},
       {"offline_hnm_candidates", c.offline_hnm_candidates},
       {"gallery_frames_per_sequence", c.gallery_frames_per_sequence},
       {"max_frame_gap", c.max_frame_gap},
       {"search_shift", c.search_shift},
       {"search_scale_jitter", c.search_scale_jitter},
       {"frames_limit", c.frames_limit},
       {"positive_iou", c.positive_iou},
       {"negative_iou", c.negative_iou},
       {"hnm_iou", c.hnm_iou},
       {"include_gt_proposal", c.include_gt_proposal},
       {"episode", episode_name(c.episode)},
       {"loss_weights", {c.weights.cls, c.weights.reg, c.weights.matching}},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
#define SRN_FIELD(name) c.name = j.value(#name, d.name)
  SRN_FIELD(epochs);
  SRN_FIELD(steps_per_epoch);
  SRN_FIELD(batch_size);
  SRN_FIELD(max_positives);
  SRN_FIELD(max_negatives);
  SRN_FIELD(relation_pairs);
  SRN_FIELD(warmup_start_lr);
  SRN_FIELD(peak_lr);
  SRN_FIELD(final_lr);
  SRN_FIELD(warmup_epochs);
  SRN_FIELD(backbone_release_epoch);
  SRN_FIELD(backbone_lr_factor);
  SRN_FIELD(frozen_stages);
  SRN_FIELD(weight_decay);
  SRN_FIELD(momentum);
  SRN_FIELD(online_hnm_epoch);
  SRN_FIELD(offline_hnm_epoch);
  SRN_FIELD(hard_negative_mining);
  SRN_FIELD(offline_hnm_prob);
  SRN_FIELD(offline_hnm_candidates);
  SRN_FIELD(gallery_frames_per_sequence);
  SRN_FIELD(max_frame_gap);
  SRN_FIELD(search_shift);
  SRN_FIELD(search_scale_jitter);
  SRN_FIELD(frames_limit);
  SRN_FIELD(positive_iou);
  SRN_FIELD(negative_iou);
  SRN_FIELD(hnm_iou);
  SRN_FIELD(include_gt_proposal);
  SRN_FIELD(grad_clip);
  SRN_FIELD(seed);
#undef SRN_FIELD
  c.episode = parse_episode(j.value("episode", std::string(episode_name(d.episode))));
  if (j.contains("loss_weights")) {
    const auto w = j.at("loss_weights").get<std::vector<double>>();
    SRN_CHECK(w.size() == 3, ErrorCode::kParse, "loss_weights needs three entries");
    c.weights = {w[0], w[1], w[2]};
  }
  SRN_CHECK(c.weights.cls >= 0 && c.weights.reg >= 0 && c.weights.matching >= 0, ErrorCode::kInvalidArgument,
            "loss weights must be non-negative");
  SRN_CHECK(c.epochs > c.warmup_epochs && c.warmup_epochs > 0, ErrorCode::kInvalidArgument,
            "need 0 < warmup_epochs < epochs");
  SRN_CHECK(c.steps_per_epoch > 0 && c.batch_size > 0 && c.relation_pairs > 0, ErrorCode::kInvalidArgument,
            "steps_per_epoch, batch_size and relation_pairs must be positive");
  SRN_CHECK(c.warmup_start_lr > 0 && c.peak_lr >= c.warmup_start_lr && c.final_lr > 0 && c.final_lr <= c.peak_lr,
            ErrorCode::kInvalidArgument, "learning rates must be positive and monotone within each phase");
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  SRN_CHECK(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

// ---- schedule ------------------------------------------------------------

double lr_at(const TrainConfig& cfg, int epoch, double step_fraction) {
  SRN_CHECK(epoch >= 1 && epoch <= cfg.epochs, ErrorCode::kInvalidArgument,
            "epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(cfg.epochs));
  const double f = std::clamp(step_fraction, 0.0, 1.0);
  if (epoch <= cfg.warmup_epochs) {
    const double t = (epoch - 1 + f) / cfg.warmup_epochs;
    return (1.0 - t) * cfg.warmup_start_lr + t * cfg.peak_lr;
  }
  const double t = (epoch - cfg.warmup_epochs - 1 + f) / (cfg.epochs - cfg.warmup_epochs);
  if (t >= 1.0) return cfg.final_lr;
  if (t <= 0.0) return cfg.peak_lr;
  return cfg.peak_lr * std::pow(cfg.final_lr / cfg.peak_lr, t);
}

double backbone_lr_at(const TrainConfig& cfg, int epoch, double step_fraction) {
  if (epoch < cfg.backbone_release_epoch) return 0.0;
  return cfg.backbone_lr_factor * lr_at(cfg, epoch, step_fraction);
}

// ---- episodes ------------------------------------------------------------

std::pair<FrameRef, FrameRef> sample_frame_pair(const std::vector<Sequence>& data, int max_gap, int frames_limit,
                                                Rng& rng) {
  SRN_CHECK(!data.empty(), ErrorCode::kEmptyInput, "empty dataset");
  const int s = static_cast<int>(rng.below(data.size()));
  const int n = usable_frames(data[s], frames_limit);
  SRN_CHECK(n > 0, ErrorCode::kEmptyInput, "sequence " + data[s].name + " has no frames");
  const int a = static_cast<int>(rng.below(n));
  const int lo = std::max(0, a - max_gap), hi = std::min(n - 1, a + max_gap);
  const int b = rng.range(lo, hi);
  return {{s, a}, {s, b}};
}

Triplet build_triplet(const std::vector<Sequence>& data, const TrainConfig& cfg, Rng& rng,
                      const OfflineMiner* miner) {
  SRN_CHECK(data.size() >= 2, ErrorCode::kInvalidArgument, "triplets need at least two sequences");
  Triplet t;
  std::tie(t.support, t.query) = sample_frame_pair(data, cfg.max_frame_gap, cfg.frames_limit, rng);

  const Sequence& sa = data[t.support.sequence];
  const BBox& ga = sa.gt[t.support.frame];
  t.s_c = crop_template(sa.frames[t.support.frame], ga);
  t.s_c_box = t.s_c.to_patch(ga);

  const BBox& gb = sa.gt[t.query.frame];
  const double side = context_side(gb) * kSearchSize / static_cast<double>(kTemplateSize) *
                      (1.0 + rng.uniform(-cfg.search_scale_jitter, cfg.search_scale_jitter));
  const double scale = kSearchSize / side;
  const double dx = rng.uniform(-cfg.search_shift, cfg.search_shift) / scale;
  const double dy = rng.uniform(-cfg.search_shift, cfg.search_shift) / scale;
  t.q_c = crop_patch(sa.frames[t.query.frame], gb.cx() + dx, gb.cy() + dy, side, kSearchSize);
  t.q_c_box = t.q_c.to_patch(gb);

  if (miner && miner->gallery && rng.bernoulli(miner->prob)) {
    const auto q = mine_hard_offline(*miner->gallery, miner->embed(t.s_c), t.support.sequence, miner->candidates);
    t.gallery_short = q.short_result;
    if (!q.indices.empty()) {
      t.negative = miner->gallery->entries()[q.indices[rng.below(q.indices.size())]].ref;
      t.negative_from_gallery = true;
    }
  }
  if (!t.negative_from_gallery) {
    int other = static_cast<int>(rng.below(data.size() - 1));
    if (other >= t.support.sequence) ++other;
    t.negative = {other, static_cast<int>(rng.below(usable_frames(data[other], cfg.frames_limit)))};
  }
  const Sequence& sn = data[t.negative.sequence];
  const BBox& gn = sn.gt[t.negative.frame];
  t.s_n = crop_search(sn.frames[t.negative.frame], gn);
  t.s_n_box = t.s_n.to_patch(gn);
  return t;
}

ClsSample sample_cls_reg(const LabelMap& labels, int max_pos, int max_neg, Rng& rng) {
  std::vector<int> pos, neg;
  for (int i = 0; i < static_cast<int>(labels.labels.size()); ++i) {
    if (labels.labels[i] == Label::kPositive) pos.push_back(i);
    if (labels.labels[i] == Label::kNegative) neg.push_back(i);
  }
  ClsSample s;
  s.positives = sample_without_replacement(std::move(pos), max_pos, rng);
  s.negatives = sample_without_replacement(std::move(neg), max_neg, rng);
  std::sort(s.positives.begin(), s.positives.end());
  std::sort(s.negatives.begin(), s.negatives.end());
  return s;
}

PairCounts pair_counts(int n, EpisodeMode mode) {
  SRN_CHECK(n > 0, ErrorCode::kInvalidArgument, "pair batch size must be positive");
  if (mode == EpisodeMode::kNaive) return {n / 4, n - n / 4, 0};
  return {n / 4, n / 2, n - n / 4 - n / 2};
}

std::vector<RelationPair> build_relation_pairs(const std::vector<int>& positives, const std::vector<int>& negatives,
                                               int n, EpisodeMode mode, Rng& rng) {
  if (positives.empty() || negatives.empty()) return {};
  const PairCounts c = pair_counts(n, mode);
  auto draw = [&rng](const std::vector<int>& pool, int k) {
    std::vector<int> out;
    if (k <= static_cast<int>(pool.size())) return sample_without_replacement(pool, k, rng);
    out = pool;
    while (static_cast<int>(out.size()) < k) out.push_back(pool[rng.below(pool.size())]);
    return out;
  };
  std::vector<RelationPair> pairs;
  for (int q : draw(positives, c.pp)) pairs.push_back({PairKind::kPP, q, 1.0f});
  for (int q : draw(negatives, c.pn)) pairs.push_back({PairKind::kPN, q, 0.0f});
  for (int i = 0; i < c.nn; ++i) {
    const auto& pool = rng.bernoulli(0.5) ? positives : negatives;
    pairs.push_back({PairKind::kNN, pool[rng.below(pool.size())], 0.0f});
  }
  return pairs;
}

MinedNegatives mine_hard_online(const std::vector<BBox>& proposals, const BBox& gt, const std::vector<double>& scores,
                                int count, double max_iou) {
  SRN_CHECK(!proposals.empty(), ErrorCode::kEmptyInput, "no proposals to mine");
  SRN_CHECK(scores.size() == proposals.size(), ErrorCode::kShapeMismatch, "one score per proposal required");
  std::vector<int> kept;
  for (int i = 0; i < static_cast<int>(proposals.size()); ++i)
    if (iou(proposals[i], gt) <= max_iou) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  MinedNegatives out;
  out.short_result = static_cast<int>(kept.size()) < count;
  kept.resize(std::min<size_t>(kept.size(), static_cast<size_t>(std::max(count, 0))));
  out.indices = std::move(kept);
  return out;
}

void Gallery::add(FrameRef ref, std::vector<float> embedding) { entries_.push_back({ref, std::move(embedding)}); }

Gallery::Query Gallery::nearest(const std::vector<float>& embedding, int exclude_sequence, int n) const {
  std::vector<std::pair<double, int>> scored;
  for (int i = 0; i < static_cast<int>(entries_.size()); ++i) {
    if (entries_[i].ref.sequence == exclude_sequence) continue;
    SRN_CHECK(entries_[i].embedding.size() == embedding.size(), ErrorCode::kShapeMismatch, "embedding size");
    double dot = 0;
    for (size_t k = 0; k < embedding.size(); ++k) dot += static_cast<double>(entries_[i].embedding[k]) * embedding[k];
    scored.push_back({dot, i});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Query q;
  q.short_result = static_cast<int>(scored.size()) < n;
  for (int i = 0; i < std::min<int>(n, static_cast<int>(scored.size())); ++i) q.indices.push_back(scored[i].second);
  return q;
}

template <typename T>
std::vector<float> template_embedding(const Model<T>& model, const Patch& template_patch) {
  ag::NoGradGuard guard;
  const auto pyr = extract_pyramid(model.backbone(), template_patch, Role::kTemplate);
  const auto& f = pyr.full[1].value();  // L4
  const int c = f.dim(0);
  const size_t hw = static_cast<size_t>(f.dim(1)) * f.dim(2);
  std::vector<float> e(c);
  double norm = 0;
  for (int ch = 0; ch < c; ++ch) {
    double s = 0;
    for (size_t i = 0; i < hw; ++i) s += f[ch * hw + i];
    e[ch] = static_cast<float>(s / hw);
    norm += static_cast<double>(e[ch]) * e[ch];
  }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& v : e) v = static_cast<float>(v / norm);
  else
    e.assign(c, static_cast<float>(1.0 / std::sqrt(static_cast<double>(c))));
  return e;
}

template <typename T>
Gallery build_gallery(const Model<T>& model, const std::vector<Sequence>& data, int frames_per_sequence,
                      int frames_limit) {
  Gallery g;
  for (int s = 0; s < static_cast<int>(data.size()); ++s) {
    const int n = usable_frames(data[s], frames_limit);
    const int k = std::min(n, std::max(1, frames_per_sequence));
    for (int i = 0; i < k; ++i) {
      const int f = k == 1 ? 0 : static_cast<int>(static_cast<long>(i) * (n - 1) / (k - 1));
      g.add({s, f}, template_embedding(model, crop_template(data[s].frames[f], data[s].gt[f])));
    }
  }
  return g;
}

template <typename T>
ag::Var<T> matching_loss(const ag::Var<T>& r, const std::vector<T>& y) {
  return ag::mse(r, y);
}

template <typename T>
ag::Var<T> total_loss(const ag::Var<T>& cls, const ag::Var<T>& reg, const ag::Var<T>& matching,
                      const LossWeights& w) {
  ag::Var<T> acc;
  auto push = [&](const ag::Var<T>& v, double weight) {
    if (!v.defined()) return;
    auto term = ag::scale(v, static_cast<T>(weight));
    acc = acc.defined() ? ag::add(acc, term) : term;
  };
  push(cls, w.cls);
  push(reg, w.reg);
  push(matching, w.matching);
  return acc.defined() ? acc : ag::Var<T>::constant(Tensor<T>({1}));
}

// ---- episode forward -----------------------------------------------------

namespace {

/// Mean over enabled levels of the relation score between per-pair supports
/// and query boxes pooled from the search pyramid.
template <typename T>
ag::Var<T> pair_scores(const Model<T>& model, const FeaturePyramid<T>& x,
                       const std::array<ag::Var<T>, kNumLevels>& supports, const ag::Var<T>& boxes) {
  const auto& levels = model.config().levels;
  ag::Var<T> acc;
  for (int l : levels.indices()) {
    auto query = prroi_pool(x.levels[l], boxes);
    auto r = model.detector(l).score(supports[l], query).combined;
    acc = acc.defined() ? ag::add(acc, r) : r;
  }
  return levels.count() == 1 ? acc : ag::scale(acc, T(1) / T(levels.count()));
}

}  // namespace

template <typename T>
EpisodeLoss<T> episode_loss(const Model<T>& model, const Triplet& tri, const TrainConfig& cfg, bool online_hnm,
                            Rng& rng) {
  EpisodeLoss<T> out;
  const GridSpec grid;
  const LabelMap labels = assign_labels(tri.q_c_box, grid);
  const ClsSample sample = sample_cls_reg(labels, cfg.max_positives, cfg.max_negatives, rng);
  if (sample.empty()) {
    out.skipped = true;
    return out;
  }

  const auto& levels = model.config().levels;
  const auto z = extract_pyramid(model.backbone(), tri.s_c, Role::kTemplate);
  const auto x = extract_pyramid(model.backbone(), tri.q_c, Role::kSearch);
  const auto co = model.head().forward(z, x);
  const auto rois = pool_template_rois(z, tri.s_c_box, levels);

  // Decoded per-location proposals from the current regression output.
  const Tensor<T>& reg = co.reg_all.value();
  const size_t plane = static_cast<size_t>(grid.count());
  std::vector<BBox> proposals(grid.count());
  std::vector<uint8_t> degenerate(grid.count(), 0);
  for (int flat = 0; flat < grid.count(); ++flat) {
    Distances d{};
    for (int k = 0; k < 4; ++k) d[k] = static_cast<double>(reg[k * plane + flat]);
    bool deg = false;
    proposals[flat] = decode_box(grid.px(flat % grid.size), grid.px(flat / grid.size), d, &deg);
    degenerate[flat] = deg || !proposals[flat].has_area();
  }

  // Classification through the matching map at the sampled locations.
  std::vector<int> locs = sample.positives;
  locs.insert(locs.end(), sample.negatives.begin(), sample.negatives.end());
  std::vector<int> cls_labels(locs.size(), 0);
  std::fill(cls_labels.begin(), cls_labels.begin() + static_cast<long>(sample.positives.size()), 1);
  std::vector<BBox> scored_boxes;
  std::vector<int> gather(locs.size());
  for (size_t i = 0; i < locs.size(); ++i) {
    if (degenerate[locs[i]]) continue;
    gather[i] = static_cast<int>(scored_boxes.size());
    scored_boxes.push_back(proposals[locs[i]]);
  }
  const int zero_slot = static_cast<int>(scored_boxes.size());
  for (size_t i = 0; i < locs.size(); ++i)
    if (degenerate[locs[i]]) gather[i] = zero_slot;
  std::vector<ag::Var<T>> m_parts;
  if (!scored_boxes.empty())
    m_parts.push_back(score_proposals(model.detectors(), levels, x, rois,
                                      ag::Var<T>::constant(boxes_to_feature<T>(scored_boxes)), model.config().heads));
  m_parts.push_back(ag::Var<T>::constant(Tensor<T>({1})));
  const auto m = ag::index_select(ag::concat_batch(m_parts), gather);
  out.cls = ag::cross_entropy(model.refine().forward_at(co.cls, locs, m), cls_labels);

  // Regression at sampled positives.
  const RegressionTargetMap targets = encode_regression(tri.q_c_box, grid);
  Tensor<T> tgt({static_cast<int>(sample.positives.size()), 4});
  for (size_t i = 0; i < sample.positives.size(); ++i)
    for (int k = 0; k < 4; ++k) tgt[i * 4 + k] = static_cast<T>(targets.distances[sample.positives[i]][k]);
  out.reg = ag::iou_loss_ltrb(ag::gather_positions(co.reg_all, sample.positives), tgt);

  // Relation pairs over proposal pools.
  std::vector<BBox> pool_boxes;
  std::vector<int> pos_pool, neg_pool;
  for (int flat = 0; flat < grid.count(); ++flat) {
    if (degenerate[flat]) continue;
    const double o = iou(proposals[flat], tri.q_c_box);
    if (o >= cfg.positive_iou) pos_pool.push_back(static_cast<int>(pool_boxes.size()));
    if (o < cfg.negative_iou) neg_pool.push_back(static_cast<int>(pool_boxes.size()));
    pool_boxes.push_back(proposals[flat]);
  }
  if (cfg.include_gt_proposal) {
    pos_pool.push_back(static_cast<int>(pool_boxes.size()));
    pool_boxes.push_back(tri.q_c_box);
  }
  const PairCounts counts = pair_counts(cfg.relation_pairs, cfg.episode);
  if (online_hnm) {
    std::vector<double> conf;
    {
      ag::NoGradGuard guard;
      const auto ones = ag::Var<T>::constant(Tensor<T>({grid.size, grid.size}, T(1)));
      conf = target_probability(model.refine().forward(co.cls.detach(), ones).value());
    }
    std::vector<BBox> cand;
    std::vector<int> cand_pool;
    std::vector<double> cand_conf;
    for (int flat = 0, pi = 0; flat < grid.count(); ++flat) {
      if (degenerate[flat]) continue;
      cand.push_back(proposals[flat]);
      cand_pool.push_back(pi++);
      cand_conf.push_back(conf[flat]);
    }
    if (!cand.empty()) {
      const auto mined = mine_hard_online(cand, tri.q_c_box, cand_conf, counts.pn, cfg.hnm_iou);
      out.mined = static_cast<int>(mined.indices.size());
      out.mined_short = mined.short_result;
      if (!mined.indices.empty()) {
        neg_pool.clear();
        for (int i : mined.indices) neg_pool.push_back(cand_pool[i]);
      }
    }
  }
  const auto pairs = build_relation_pairs(pos_pool, neg_pool, cfg.relation_pairs, cfg.episode, rng);
  if (!pairs.empty()) {
    std::vector<BBox> qboxes;
    std::vector<T> y;
    int n_support = 0, n_negative = 0;
    for (const auto& p : pairs) {
      qboxes.push_back(pool_boxes[p.query]);
      y.push_back(static_cast<T>(p.label));
      (p.kind == PairKind::kNN ? n_negative : n_support)++;
    }
    std::array<ag::Var<T>, kNumLevels> supports;
    std::optional<TemplateRois<T>> neg_rois;
    if (n_negative > 0) {
      const auto xn = extract_pyramid(model.backbone(), tri.s_n, Role::kSearch);
      const auto nb = ag::Var<T>::constant(boxes_to_feature<T>({tri.s_n_box}));
      neg_rois.emplace();
      for (int l : levels.indices()) neg_rois->blocks[l] = prroi_pool(xn.levels[l], nb);
    }
    for (int l : levels.indices()) {
      std::vector<ag::Var<T>> parts;
      if (n_support > 0) parts.push_back(ag::index_select(rois.blocks[l], std::vector<int>(n_support, 0)));
      if (n_negative > 0) parts.push_back(ag::index_select(neg_rois->blocks[l], std::vector<int>(n_negative, 0)));
      supports[l] = parts.size() == 1 ? parts[0] : ag::concat_batch(parts);
    }
    const auto r = pair_scores(model, x, supports, ag::Var<T>::constant(boxes_to_feature<T>(qboxes)));
    out.matching = matching_loss(r, y);
    out.pairs = static_cast<int>(pairs.size());
  }
  return out;
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, const std::vector<Sequence>& data)
    : cfg_(std::move(cfg)), data_(data), model_(std::make_unique<Model<float>>(cfg_.model)), rng_(cfg_.seed) {
  SRN_CHECK(data_.size() >= 2, ErrorCode::kInvalidArgument, "training needs at least two sequences");
  for (const auto& p : model_->params().params()) velocity_.emplace_back(p.var.shape());
}

void Trainer::ensure_gallery() {
  if (!gallery_) gallery_ = build_gallery(*model_, data_, cfg_.gallery_frames_per_sequence, cfg_.frames_limit);
}

StepLosses Trainer::step(int epoch, int step_in_epoch) {
  const double frac = static_cast<double>(step_in_epoch) / cfg_.steps_per_epoch;
  const bool online = cfg_.hard_negative_mining && epoch >= cfg_.online_hnm_epoch;
  const bool offline = cfg_.hard_negative_mining && cfg_.episode == EpisodeMode::kContrastive &&
                       epoch >= cfg_.offline_hnm_epoch;
  if (offline) ensure_gallery();

  auto& store = model_->params();
  store.zero_grad();
  StepLosses losses;
  ag::Var<float> batch_total;
  int used = 0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    OfflineMiner miner;
    if (offline) {
      miner.gallery = &*gallery_;
      miner.embed = [this](const Patch& p) { return template_embedding(*model_, p); };
      miner.prob = cfg_.offline_hnm_prob;
      miner.candidates = cfg_.offline_hnm_candidates;
    }
    const Triplet tri = build_triplet(data_, cfg_, rng_, offline ? &miner : nullptr);
    stats_.offline_draws += tri.negative_from_gallery;
    stats_.offline_short += tri.gallery_short;
    auto ep = episode_loss(*model_, tri, cfg_, online, rng_);
    if (ep.skipped) {
      ++stats_.skipped_episodes;
      continue;
    }
    stats_.online_mined += ep.mined;
    stats_.online_short += ep.mined_short;
    auto total = total_loss(ep.cls, ep.reg, ep.matching, cfg_.weights);
    losses.cls += ep.cls.defined() ? ep.cls.item() : 0.0;
    losses.reg += ep.reg.defined() ? ep.reg.item() : 0.0;
    losses.matching += ep.matching.defined() ? ep.matching.item() : 0.0;
    batch_total = batch_total.defined() ? ag::add(batch_total, total) : total;
    ++used;
  }
  if (used == 0) return losses;
  losses.cls /= used;
  losses.reg /= used;
  losses.matching /= used;
  auto loss = ag::scale(batch_total, 1.0f / used);
  losses.total = loss.item();
  if (!std::isfinite(losses.total))
    throw Error(ErrorCode::kNumerical, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                           std::to_string(step_in_epoch) + " (cls " + std::to_string(losses.cls) +
                                           ", reg " + std::to_string(losses.reg) + ", matching " +
                                           std::to_string(losses.matching) + ")");
  ag::backward(loss);

  const double lr_head = lr_at(cfg_, epoch, frac);
  const double lr_bb = backbone_lr_at(cfg_, epoch, frac);
  auto lr_for = [&](const nn::Param<float>& p) {
    if (p.group == nn::ParamGroup::kHead) return lr_head;
    if (p.stage <= cfg_.frozen_stages) return 0.0;
    return lr_bb;
  };
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0) {
    double sq = 0;
    for (const auto& p : store.params())
      if (lr_for(p) > 0 && !p.var.grad().empty())
        for (float g : p.var.grad().values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }
  auto& params = store.params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const double lr = lr_for(p);
    if (lr <= 0 || p.var.grad().empty()) continue;
    auto& w = p.var.mutable_value();
    const auto& g = p.var.grad();
    auto& v = velocity_[i];
    const float mom = static_cast<float>(cfg_.momentum), wd = static_cast<float>(cfg_.weight_decay);
    const float cs = static_cast<float>(clip_scale), step = static_cast<float>(lr);
    for (size_t k = 0; k < w.size(); ++k) {
      v[k] = mom * v[k] + cs * g[k] + wd * w[k];
      w[k] -= step * v[k];
    }
  }
  store.zero_grad();
  ++steps_done_;
  return losses;
}

TrainStats Trainer::run(const TrainOptions& opt) {
  std::ofstream metrics;
  if (opt.metrics_path) {
    if (opt.metrics_path->has_parent_path()) std::filesystem::create_directories(opt.metrics_path->parent_path());
    metrics.open(*opt.metrics_path, std::ios::app);
    SRN_CHECK(metrics.good(), ErrorCode::kIo, "cannot open " + opt.metrics_path->string());
  }
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    nlohmann::json events = nlohmann::json::array();
    if (cfg_.hard_negative_mining && epoch == cfg_.online_hnm_epoch) events.push_back("online_hnm_start");
    if (cfg_.hard_negative_mining && cfg_.episode == EpisodeMode::kContrastive && epoch == cfg_.offline_hnm_epoch)
      events.push_back("offline_hnm_start");
    if (epoch == cfg_.backbone_release_epoch) events.push_back("backbone_release");
    const TrainStats before = stats_;
    StepLosses sum;
    for (int s = 0; s < cfg_.steps_per_epoch; ++s) {
      StepLosses l;
      try {
        l = step(epoch, s);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNumerical && opt.snapshot_path) save_model(*opt.snapshot_path, *model_, checkpoint_meta());
        throw;
      }
      stats_.steps.push_back(l);
      sum.total += l.total;
      sum.cls += l.cls;
      sum.reg += l.reg;
      sum.matching += l.matching;
      if (opt.verbose && (s + 1) % 10 == 0)
        std::cerr << "epoch " << epoch << " step " << s + 1 << " loss " << l.total << " (cls " << l.cls << " reg "
                  << l.reg << " match " << l.matching << ")\n";
    }
    const double n = cfg_.steps_per_epoch;
    nlohmann::json row = {
        {"epoch", epoch},
        {"steps", steps_done_},
        {"loss", {{"total", sum.total / n}, {"cls", sum.cls / n}, {"reg", sum.reg / n}, {"matching", sum.matching / n}}},
        {"lr", lr_at(cfg_, epoch, 1.0)},
        {"lr_backbone", backbone_lr_at(cfg_, epoch, 1.0)},
        {"online_hnm", cfg_.hard_negative_mining && epoch >= cfg_.online_hnm_epoch},
        {"offline_hnm", gallery_.has_value()},
        {"hnm",
         {{"online_mined", stats_.online_mined - before.online_mined},
          {"online_short", stats_.online_short - before.online_short},
          {"offline_draws", stats_.offline_draws - before.offline_draws},
          {"offline_short", stats_.offline_short - before.offline_short},
          {"gallery_size", gallery_ ? gallery_->size() : 0}}},
        {"skipped_episodes", stats_.skipped_episodes - before.skipped_episodes},
        {"events", events}};
    if (metrics.is_open()) metrics << row.dump() << '\n' << std::flush;
    if (opt.verbose) std::cerr << row.dump() << '\n';
  }
  return stats_;
}

nlohmann::json Trainer::checkpoint_meta() const {
  return {{"train_config", cfg_}, {"steps", steps_done_}};
}

#define SRN_TRAIN_INSTANTIATE(T)                                                                               \
  template std::vector<float> template_embedding(const Model<T>&, const Patch&);                               \
  template Gallery build_gallery(const Model<T>&, const std::vector<Sequence>&, int, int);                     \
  template ag::Var<T> matching_loss(const ag::Var<T>&, const std::vector<T>&);                                 \
  template ag::Var<T> total_loss(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&, const LossWeights&); \
  template EpisodeLoss<T> episode_loss(const Model<T>&, const Triplet&, const TrainConfig&, bool, Rng&);

SRN_TRAIN_INSTANTIATE(float)
SRN_TRAIN_INSTANTIATE(double)

}  // namespace srn
