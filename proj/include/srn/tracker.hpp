#pragma once

// Inference: template caching on the first frame, then per-frame search,
// relation-based refinement and box selection.

#include <filesystem>
#include <optional>

#include "srn/model.hpp"
#include "srn/sequence.hpp"

namespace srn {

struct TrackerOptions {
  double window_influence = 0.4;  // exponent on the cosine window
  double size_rate = 0.3;         // size smoothing weight of the new candidate
  ProposalOptions proposals{ProposalMode::kTopK, 64};
  bool ablate_no_rd = false;  // matching map fixed to 1
  std::optional<std::filesystem::path> dump_dir;  // per-frame confidence PGMs
};

struct TrackDiagnostics {
  int argmax = -1;          // flat grid index of the selected location
  double score_pre = 0.0;   // target probability there without refinement
  double score_post = 0.0;  // and with it
  double matching = 1.0;    // matching score there
  int evaluated = 0;        // relation-scored locations
  int degenerate = 0;
};

struct TrackOutput {
  BBox box;
  double confidence = 0.0;
  TrackDiagnostics diag;
};

/// 25 x 25 outer product of Hann windows, row-major.
std::vector<double> cosine_window(int size);

struct Selection {
  int index = -1;
  double score = 0.0;
  BBox box;  // decoded candidate in search-patch coordinates
};

/// argmax of prob * window^influence (first index wins ties) and the decoded
/// box there. reg: (4, S, S).
Selection select_box(const std::vector<double>& prob, const Tensor<float>& reg, const GridSpec& grid,
                     double window_influence);

/// New box centered on the candidate with size (1 - rate) * prev + rate * candidate.
BBox smooth_size(const BBox& prev, const BBox& candidate, double rate);

class Tracker {
 public:
  explicit Tracker(const Model<float>& model, TrackerOptions opt = {});

  void init(const Image& frame, const BBox& box);
  TrackOutput update(const Image& frame);

  bool initialized() const { return initialized_; }
  const BBox& box() const { return box_; }
  int frame_count() const { return frame_; }
  const FeaturePyramid<float>& template_pyramid() const { return z_; }
  const TemplateRois<float>& template_rois() const { return rois_; }
  /// Hash over every cached template tensor.
  uint64_t cache_digest() const;

 private:
  const Model<float>& model_;
  TrackerOptions opt_;
  std::vector<double> window_;
  bool initialized_ = false;
  FeaturePyramid<float> z_;
  TemplateRois<float> rois_;
  BBox box_;
  int frame_ = 0;
};

/// Init on frame 1 and track the rest; the first box is the ground truth.
std::vector<BBox> track_sequence(const Model<float>& model, const Sequence& seq, const TrackerOptions& opt = {});

/// OTB-style "x,y,w,h" lines with four decimals.
std::string results_text(const std::vector<BBox>& boxes);

/// Write a [0, 1] map as an 8-bit PGM.
void write_unit_map(const std::filesystem::path& path, int size, const std::vector<double>& values);

}  // namespace srn
