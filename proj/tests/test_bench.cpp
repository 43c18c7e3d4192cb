#include <gtest/gtest.h>

#include "oracles.hpp"
#include "srn/bench.hpp"

using namespace srn;

namespace {

/// Frames carry their own index in the first two bytes so stub trackers can
/// look up the ground truth without a model.
Sequence indexed_sequence(int frames, double speed) {
  Sequence s;
  s.name = "stub";
  for (int f = 0; f < frames; ++f) {
    Image img(8, 8);
    img.pixels[0] = static_cast<uint8_t>(f & 0xff);
    img.pixels[1] = static_cast<uint8_t>(f >> 8);
    s.frames.push_back(img);
    s.gt.push_back(BBox::from_xywh(20 + speed * f, 30, 40, 30));
  }
  return s;
}

int frame_index(const Image& img) { return img.pixels[0] | (img.pixels[1] << 8); }

class StubTracker : public BoxTracker {
 public:
  StubTracker(const Sequence& seq, std::function<bool(int)> hit, std::vector<int>* inits)
      : seq_(seq), hit_(std::move(hit)), inits_(inits) {}
  void init(const Image& frame, const BBox& box) override {
    box_ = box;
    if (inits_) inits_->push_back(frame_index(frame));
  }
  BBox update(const Image& frame) override {
    const int f = frame_index(frame);
    if (!hit_) return box_;
    return hit_(f) ? seq_.gt[f] : BBox::from_xywh(5000, 5000, 10, 10);
  }

 private:
  const Sequence& seq_;
  std::function<bool(int)> hit_;
  std::vector<int>* inits_;
  BBox box_;
};

TrackerFactory stub(const Sequence& seq, std::function<bool(int)> hit, std::vector<int>* inits = nullptr) {
  return [&seq, hit, inits] { return std::make_unique<StubTracker>(seq, hit, inits); };
}

nlohmann::json tiny_matrix() {
  return nlohmann::json::parse(R"({
    "base": {"epochs": 2, "steps_per_epoch": 1, "batch_size": 1, "warmup_epochs": 1,
             "backbone_release_epoch": 2, "online_hnm_epoch": 2, "offline_hnm_epoch": 2,
             "model": {"channels": 4, "stem_channels": 4, "mid_channels": 4, "attention_dim": 4,
                       "global_hidden": 4, "local_hidden": 4, "patch_embed": 4}},
    "seeds": [1, 2],
    "data_seed": 5,
    "train_data": {"suite": {"count": 2, "frames": 4}},
    "eval_data": {"suite": {"count": 1, "frames": 4}},
    "variants": [{"name": "full"}, {"name": "no-rd", "reuse": "full", "ablate_no_rd": true}]
  })");
}

}  // namespace

TEST(Metrics, SuccessCurveAnchors) {
  const auto perfect = success_curve(std::vector<double>(10, 1.0));
  EXPECT_NEAR(curve_auc(perfect), 20.0 / 21.0, 1e-15);
  EXPECT_EQ(perfect[20], 0.0);
  EXPECT_EQ(curve_auc(success_curve(std::vector<double>(10, 0.0))), 0.0);
  const auto half = success_curve({0.5, 0.5});
  EXPECT_EQ(half[9], 1.0);   // 0.45
  EXPECT_EQ(half[10], 0.0);  // 0.5 is not strictly above
  EXPECT_NEAR(curve_auc(half), 10.0 / 21.0, 1e-15);
}

TEST(Metrics, CurveMonotoneAndAucIsMean) {
  oracle::Gen g(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> ious(g.range(1, 60));
    for (auto& v : ious) v = g.coin() ? g.uniform(0, 1) : std::round(g.uniform(0, 20)) / 20;
    const auto c = success_curve(ious);
    double sum = 0;
    for (int i = 0; i < kSuccessPoints; ++i) {
      if (i) EXPECT_LE(c[i], c[i - 1]);
      double ref = 0;
      for (double v : ious) ref += v > i / 20.0;
      EXPECT_NEAR(c[i], ref / ious.size(), 1e-15);
      sum += c[i];
    }
    EXPECT_NEAR(curve_auc(c), sum / kSuccessPoints, 1e-9);
  }
}

TEST(Metrics, Precision) {
  EXPECT_DOUBLE_EQ(center_error({0, 0, 2, 2}, {3, 4, 5, 6}), 5.0);
  EXPECT_DOUBLE_EQ(precision_at({0, 20, 20.5, 100}), 0.5);
  EXPECT_DOUBLE_EQ(precision_at({}), 0.0);
}

TEST(Ope, OracleAndZeroTrackers) {
  const auto seq = indexed_sequence(30, 3);
  const auto oracle_run = run_ope_sequence(stub(seq, [](int) { return true; }), seq);
  EXPECT_EQ(oracle_run.iou.size(), 29u);
  EXPECT_NEAR(oracle_run.auc, 20.0 / 21.0, 1e-12);
  EXPECT_EQ(oracle_run.precision20, 1.0);
  EXPECT_EQ(oracle_run.boxes[0], seq.gt[0]);
  const auto zero = run_ope_sequence(stub(seq, [](int) { return false; }), seq);
  EXPECT_EQ(zero.auc, 0.0);
  EXPECT_EQ(zero.precision20, 0.0);
}

TEST(Ope, StaticTrackerDegradesWithMotion) {
  const auto still = indexed_sequence(30, 0), moving = indexed_sequence(30, 2);
  const double a = run_ope_sequence(stub(still, nullptr), still).auc;
  const double b = run_ope_sequence(stub(moving, nullptr), moving).auc;
  EXPECT_NEAR(a, 20.0 / 21.0, 1e-12);
  EXPECT_LT(b, a);
  EXPECT_GT(b, 0.0);
}

TEST(Restart, OracleNeverFails) {
  const auto seq = indexed_sequence(100, 1);
  std::vector<int> inits;
  const auto r = run_restart_sequence(stub(seq, [](int) { return true; }, &inits), seq);
  EXPECT_EQ(r.failures, 0);
  EXPECT_EQ(inits, (std::vector<int>{0}));
}

TEST(Restart, AlwaysWrongFailsSixTimes) {
  const auto seq = indexed_sequence(100, 1);
  std::vector<int> inits;
  const auto r = run_restart_sequence(stub(seq, [](int) { return false; }, &inits), seq);
  EXPECT_EQ(r.failures, 6);
  EXPECT_EQ(r.failure_frames, (std::vector<int>{10, 25, 40, 55, 70, 85}));
  EXPECT_EQ(r.failure_frames, oracle::restart_failures(100, 10, 5, [](int) { return false; }));
  EXPECT_EQ(inits, (std::vector<int>{0, 15, 30, 45, 60, 75, 90}));
}

TEST(Restart, MatchesSimulatorOnRandomHitPatterns) {
  oracle::Gen g(2);
  for (int t = 0; t < 200; ++t) {
    const int frames = g.range(2, 150);
    const double p = g.uniform(0, 1);
    std::vector<bool> hits(frames);
    for (int f = 0; f < frames; ++f) hits[f] = g.uniform(0, 1) < p;
    const auto hit = [hits](int f) { return static_cast<bool>(hits[f]); };
    const auto seq = indexed_sequence(frames, 1);
    std::vector<int> inits;
    const auto r = run_restart_sequence(stub(seq, hit, &inits), seq);
    ASSERT_EQ(r.failure_frames, oracle::restart_failures(frames, 10, 5, hit));
    for (size_t i = 1; i < r.failure_frames.size(); ++i) EXPECT_GT(r.failure_frames[i], r.failure_frames[i - 1]);
    for (size_t i = 0; i < r.failure_frames.size(); ++i) {
      if (i + 1 < inits.size()) EXPECT_EQ(inits[i + 1], r.failure_frames[i] + 5);
    }
    ASSERT_EQ(r.boxes.size(), static_cast<size_t>(frames));
  }
}

TEST(Restart, HeldBoxesDuringDelay) {
  const auto seq = indexed_sequence(40, 1);
  const auto r = run_restart_sequence(stub(seq, [](int) { return false; }), seq);
  for (int f = 11; f < 15; ++f) EXPECT_EQ(r.boxes[f], r.boxes[10]);
  EXPECT_EQ(r.boxes[15], seq.gt[15]);
}

TEST(Summary, MeansAndSums) {
  SequenceResult a, b;
  a.auc = 0.2;
  a.precision20 = 0.5;
  a.failures = 2;
  b.auc = 0.6;
  b.precision20 = 1.0;
  b.failures = 3;
  const auto s = summarize({a, b});
  EXPECT_NEAR(s.auc, 0.4, 1e-15);
  EXPECT_NEAR(s.precision20, 0.75, 1e-15);
  EXPECT_EQ(s.failures, 5);
  EXPECT_EQ(s.sequences, 2);
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(Summary, ReportJson) {
  const auto seq = indexed_sequence(12, 1);
  const auto rep = run_ope(stub(seq, [](int) { return true; }), {seq, seq});
  const auto j = report_json(rep);
  EXPECT_EQ(j["protocol"], "ope");
  EXPECT_EQ(j["per_sequence"].size(), 2u);
  EXPECT_EQ(j["summary"]["sequences"], 2);
  EXPECT_NEAR(j["summary"]["auc"].get<double>(), 20.0 / 21.0, 1e-12);
}

TEST(Ablation, MatrixParsing) {
  auto j = tiny_matrix();
  const auto m = ablation_from_json(j);
  EXPECT_EQ(m.variants.size(), 2u);
  EXPECT_EQ(m.seeds, (std::vector<uint64_t>{1, 2}));
  EXPECT_EQ(m.base.model.channels, 4);
  j["sweep"] = "heads";
  j["variants"] = nlohmann::json::array();
  const auto heads = ablation_from_json(j);
  ASSERT_EQ(heads.variants.size(), 7u);
  EXPECT_EQ(heads.variants[0].train_overrides["model"]["heads"], heads.variants[0].name.substr(6));
  j["sweep"] = "levels";
  EXPECT_EQ(ablation_from_json(j).variants.size(), 7u);
  j["sweep"] = "widths";
  EXPECT_THROW(ablation_from_json(j), Error);
  auto bad = tiny_matrix();
  bad["variants"][1]["reuse"] = "missing";
  EXPECT_THROW(ablation_from_json(bad), Error);
  bad = tiny_matrix();
  bad.erase("eval_data");
  EXPECT_THROW(ablation_from_json(bad), Error);
}

TEST(Ablation, SharedDataAndOneRowPerVariant) {
  const auto m = ablation_from_json(tiny_matrix());
  const auto data = ablation_data(m), again = ablation_data(m);
  ASSERT_EQ(data.train.size(), 2u);
  ASSERT_EQ(data.eval.size(), 1u);
  EXPECT_TRUE(data.train == again.train);
  EXPECT_FALSE(data.train[0] == data.eval[0]);
  const auto rows = run_ablation(m, data);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.data_seed, 5u);
    EXPECT_EQ(r.ope.size(), 2u);
    EXPECT_EQ(r.restart.size(), 2u);
    EXPECT_NEAR(r.auc, median({r.ope[0].auc, r.ope[1].auc}), 1e-15);
  }
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,data_seed,seeds,auc,precision20,failures,auc_per_seed,failures_per_seed");
  EXPECT_NE(csv.find("\nfull,5,1;2,"), std::string::npos);
  EXPECT_NE(csv.find("\nno-rd,5,1;2,"), std::string::npos);
}
