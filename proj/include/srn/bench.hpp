#pragma once

// Evaluation protocols (one-pass and restart), their metrics, and the
// ablation harness that trains and scores a matrix of model variants.

#include <array>
#include <filesystem>
#include <functional>
#include <memory>

#include <json.hpp>

#include "srn/sequence.hpp"
#include "srn/tracker.hpp"
#include "srn/trainer.hpp"

namespace srn {

/// Anything that can follow a box through a frame stream.
class BoxTracker {
 public:
  virtual ~BoxTracker() = default;
  virtual void init(const Image& frame, const BBox& box) = 0;
  virtual BBox update(const Image& frame) = 0;
};

using TrackerFactory = std::function<std::unique_ptr<BoxTracker>()>;

/// Factory over a trained model; the model must outlive every tracker made.
TrackerFactory model_tracker_factory(const Model<float>& model, TrackerOptions opt = {});

constexpr int kSuccessPoints = 21;  // thresholds 0, 0.05, ..., 1
constexpr double kPrecisionRadius = 20.0;

/// success(t) = fraction of IoUs strictly above t.
std::array<double, kSuccessPoints> success_curve(const std::vector<double>& ious);
double curve_auc(const std::array<double, kSuccessPoints>& curve);
double center_error(const BBox& a, const BBox& b);
/// Fraction of center errors within the radius.
double precision_at(const std::vector<double>& errors, double radius = kPrecisionRadius);

struct SequenceResult {
  std::string name;
  std::vector<BBox> boxes;  // one per frame, frame 1 is the init box
  std::vector<double> iou;  // scored frames only (frame 2 onwards)
  std::vector<double> center_error;
  std::array<double, kSuccessPoints> success{};
  double auc = 0.0;
  double precision20 = 0.0;
  int failures = 0;
  std::vector<int> failure_frames;  // 0-based frame indices
};

/// Metrics for a box stream against ground truth; frame 1 is excluded.
SequenceResult score_boxes(const std::string& name, const std::vector<BBox>& boxes, const std::vector<BBox>& gt);

struct RestartOptions {
  int failure_frames = 10;  // consecutive zero-IoU frames that declare a failure
  int reinit_delay = 5;     // frames between the declaration and re-init
};

struct EvalSummary {
  double auc = 0.0;          // mean over sequences
  double precision20 = 0.0;  // mean over sequences
  int failures = 0;          // sum over sequences
  int sequences = 0;
};

struct EvalReport {
  std::string protocol;
  std::vector<SequenceResult> per_sequence;
  EvalSummary summary;
};

SequenceResult run_ope_sequence(const TrackerFactory& factory, const Sequence& seq);
SequenceResult run_restart_sequence(const TrackerFactory& factory, const Sequence& seq, const RestartOptions& opt = {});

EvalReport run_ope(const TrackerFactory& factory, const std::vector<Sequence>& data);
EvalReport run_restart(const TrackerFactory& factory, const std::vector<Sequence>& data,
                       const RestartOptions& opt = {});
EvalSummary summarize(const std::vector<SequenceResult>& results);

nlohmann::json report_json(const EvalReport& report);

// ---- ablation ------------------------------------------------------------

struct AblationVariant {
  std::string name;
  nlohmann::json train_overrides = nlohmann::json::object();  // merge-patched into the base config
  bool ablate_no_rd = false;
  std::string reuse;  // train nothing, evaluate this variant's models instead
};

struct AblationMatrix {
  TrainConfig base;
  std::vector<AblationVariant> variants;
  std::vector<uint64_t> seeds{1};
  uint64_t data_seed = 1;
  nlohmann::json train_data;  // generator description for training sequences
  nlohmann::json eval_data;   // and for evaluation sequences
  TrackerOptions tracker;
  RestartOptions restart;
};

/// Parse a matrix; "sweep": "heads" or "levels" expands to one variant per
/// non-empty subset in addition to any listed variants.
AblationMatrix ablation_from_json(const nlohmann::json& j);

struct AblationRow {
  std::string variant;
  uint64_t data_seed = 0;
  std::vector<uint64_t> seeds;
  std::vector<EvalSummary> ope;      // per seed
  std::vector<EvalSummary> restart;  // per seed
  double auc = 0.0;                  // medians over seeds
  double precision20 = 0.0;
  double failures = 0.0;
};

using AblationLog = std::function<void(const std::string&)>;

/// Generated training and evaluation sets; each variant sees the same data.
struct AblationData {
  std::vector<Sequence> train, eval;
};
AblationData ablation_data(const AblationMatrix& m);

std::vector<AblationRow> run_ablation(const AblationMatrix& m, const AblationData& data, const AblationLog& log = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

double median(std::vector<double> v);

}  // namespace srn
