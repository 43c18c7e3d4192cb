#pragma once

// Episodic training: triplet construction, sampling, relation pairs, hard
// negative mining, losses, the learning-rate schedule and the SGD loop.

#include <filesystem>
#include <functional>
#include <optional>

#include "srn/model.hpp"
#include "srn/sequence.hpp"

namespace srn {

enum class EpisodeMode {
  kContrastive,  // two-way: PP, PN and NN pairs with a negative support
  kNaive,        // one-way: PP and PN pairs only
};

struct LossWeights {
  double cls = 1.0;
  double reg = 1.0;
  double matching = 1.0;
};

struct TrainConfig {
  ModelConfig model;
  int epochs = 20;
  int steps_per_epoch = 100;
  int batch_size = 28;  // triplets per optimizer step
  int max_positives = 16;
  int max_negatives = 48;
  int relation_pairs = 16;  // pairs per triplet
  double warmup_start_lr = 0.001;
  double peak_lr = 0.005;
  double final_lr = 0.00005;
  int warmup_epochs = 5;
  int backbone_release_epoch = 11;
  double backbone_lr_factor = 0.1;
  int frozen_stages = 2;
  double weight_decay = 0.0001;
  double momentum = 0.9;
  int online_hnm_epoch = 5;
  int offline_hnm_epoch = 15;
  bool hard_negative_mining = true;
  double offline_hnm_prob = 0.5;
  int offline_hnm_candidates = 4;
  int gallery_frames_per_sequence = 4;
  int max_frame_gap = 100;
  double search_shift = 32.0;  // max center jitter of the search crop, patch pixels
  double search_scale_jitter = 0.05;
  int frames_limit = 0;  // use only the first N frames of each sequence (0 = all)
  double positive_iou = 0.5;
  double negative_iou = 0.3;
  double hnm_iou = 0.2;
  bool include_gt_proposal = true;
  EpisodeMode episode = EpisodeMode::kContrastive;
  LossWeights weights;
  double grad_clip = 0.0;  // global gradient norm cap; 0 disables
  uint64_t seed = 7;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

// ---- schedule ------------------------------------------------------------

/// Head learning rate at `epoch` (1-based) and fraction of that epoch done.
double lr_at(const TrainConfig& cfg, int epoch, double step_fraction);
/// Backbone group rate: 0 before the release epoch, factor x head rate after.
double backbone_lr_at(const TrainConfig& cfg, int epoch, double step_fraction);

// ---- episodes ------------------------------------------------------------

struct FrameRef {
  int sequence = 0;
  int frame = 0;
};

struct Triplet {
  FrameRef support;   // s_c: template crop
  FrameRef query;     // q_c: search crop, same sequence
  FrameRef negative;  // s_n: search crop from another sequence
  bool negative_from_gallery = false;
  bool gallery_short = false;
  Patch s_c, q_c, s_n;
  BBox s_c_box, q_c_box, s_n_box;  // gt in each patch's coordinates
};

class Gallery;

/// Offline hard-negative source: nearest gallery entries to the support's
/// embedding replace the uniform negative draw with probability `prob`.
struct OfflineMiner {
  const Gallery* gallery = nullptr;
  std::function<std::vector<float>(const Patch&)> embed;
  double prob = 0.5;
  int candidates = 4;
};

Triplet build_triplet(const std::vector<Sequence>& data, const TrainConfig& cfg, Rng& rng,
                      const OfflineMiner* miner = nullptr);
/// Frame-pair sampling only, without cropping.
std::pair<FrameRef, FrameRef> sample_frame_pair(const std::vector<Sequence>& data, int max_gap, int frames_limit,
                                                Rng& rng);

struct ClsSample {
  std::vector<int> positives;  // flat grid indices
  std::vector<int> negatives;
  bool empty() const { return positives.empty(); }
};

ClsSample sample_cls_reg(const LabelMap& labels, int max_pos, int max_neg, Rng& rng);

enum class PairKind { kPP, kPN, kNN };

struct RelationPair {
  PairKind kind;
  int query;      // index into the proposal list
  float label;    // 1 for PP, else 0
};

struct PairCounts {
  int pp, pn, nn;
};
PairCounts pair_counts(int n, EpisodeMode mode);

/// Pairs over proposal pools (indices into a proposal list). Pools are
/// sampled with replacement when short; empty `positives` or `negatives`
/// yields an empty batch.
std::vector<RelationPair> build_relation_pairs(const std::vector<int>& positives, const std::vector<int>& negatives,
                                               int n, EpisodeMode mode, Rng& rng);

struct MinedNegatives {
  std::vector<int> indices;  // into the proposal list
  bool short_result = false;
};

/// Filter IoU <= max_iou with gt, then highest confidence first (ties by index).
MinedNegatives mine_hard_online(const std::vector<BBox>& proposals, const BBox& gt, const std::vector<double>& scores,
                                int count, double max_iou = 0.2);

struct GalleryEntry {
  FrameRef ref;
  std::vector<float> embedding;  // unit norm
};

/// Brute-force cosine index over template embeddings.
class Gallery {
 public:
  void add(FrameRef ref, std::vector<float> embedding);
  size_t size() const { return entries_.size(); }
  const std::vector<GalleryEntry>& entries() const { return entries_; }

  struct Query {
    std::vector<int> indices;  // best first
    bool short_result = false;
  };
  Query nearest(const std::vector<float>& embedding, int exclude_sequence, int n) const;

 private:
  std::vector<GalleryEntry> entries_;
};

/// The `n` gallery entries closest to `target` by cosine similarity,
/// excluding the target's own sequence.
inline Gallery::Query mine_hard_offline(const Gallery& gallery, const std::vector<float>& target,
                                        int exclude_sequence, int n) {
  return gallery.nearest(target, exclude_sequence, n);
}

/// Global-average-pooled L4 template feature, L2-normalized.
template <typename T>
std::vector<float> template_embedding(const Model<T>& model, const Patch& template_patch);

template <typename T>
Gallery build_gallery(const Model<T>& model, const std::vector<Sequence>& data, int frames_per_sequence,
                      int frames_limit = 0);

template <typename T>
ag::Var<T> matching_loss(const ag::Var<T>& r, const std::vector<T>& y);

template <typename T>
ag::Var<T> total_loss(const ag::Var<T>& cls, const ag::Var<T>& reg, const ag::Var<T>& matching,
                      const LossWeights& w);

// ---- training loop -------------------------------------------------------

struct StepLosses {
  double total = 0, cls = 0, reg = 0, matching = 0;
};

struct TrainStats {
  std::vector<StepLosses> steps;
  int skipped_episodes = 0;
  int online_mined = 0;
  int online_short = 0;
  int offline_draws = 0;
  int offline_short = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> metrics_path;  // metrics.jsonl
  std::optional<std::filesystem::path> snapshot_path;  // written on NaN abort
  bool verbose = false;
};

/// Forward pass plus losses for one triplet; returns undefined vars for the
/// parts that could not be formed.
template <typename T>
struct EpisodeLoss {
  ag::Var<T> cls, reg, matching;
  int pairs = 0;
  int mined = 0;
  bool mined_short = false;
  bool skipped = false;
};

template <typename T>
EpisodeLoss<T> episode_loss(const Model<T>& model, const Triplet& tri, const TrainConfig& cfg, bool online_hnm,
                            Rng& rng);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const std::vector<Sequence>& data);

  /// Run every epoch; throws kNumerical on a non-finite loss.
  TrainStats run(const TrainOptions& opt = {});
  /// One optimizer step at (epoch, step within epoch).
  StepLosses step(int epoch, int step_in_epoch);

  Model<float>& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  nlohmann::json checkpoint_meta() const;

 private:
  void ensure_gallery();

  TrainConfig cfg_;
  const std::vector<Sequence>& data_;
  std::unique_ptr<Model<float>> model_;
  std::vector<Tensor<float>> velocity_;
  Rng rng_;
  std::optional<Gallery> gallery_;
  TrainStats stats_;
  int steps_done_ = 0;
};

}  // namespace srn
