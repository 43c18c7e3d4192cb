#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "srn/synth.hpp"
#include "srn/tracker.hpp"

using namespace srn;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.channels = 8;
  c.stem_channels = 8;
  c.mid_channels = 8;
  c.attention_dim = 4;
  c.global_hidden = 8;
  c.local_hidden = 8;
  c.patch_embed = 4;
  return c;
}

const Model<float>& model() {
  static const Model<float> m(small_model());
  return m;
}

const Sequence& clip() {
  static const Sequence s = [] {
    SequenceSpec spec;
    spec.frames = 6;
    spec.seed = 4;
    return gen_sequence(spec);
  }();
  return s;
}

Tensor<float> constant_reg(float d) { return Tensor<float>({4, 25, 25}, d); }

bool finite_box(const BBox& b) {
  return std::isfinite(b.x0) && std::isfinite(b.y0) && std::isfinite(b.x1) && std::isfinite(b.y1) && b.has_area();
}

}  // namespace

TEST(Window, HannOuterProduct) {
  const auto w = cosine_window(25);
  ASSERT_EQ(w.size(), 625u);
  EXPECT_NEAR(w[12 * 25 + 12], 1.0, 1e-15);
  EXPECT_NEAR(w[0], 0.0, 1e-15);
  const double h3 = 0.5 - 0.5 * std::cos(2 * M_PI * 3 / 24), h7 = 0.5 - 0.5 * std::cos(2 * M_PI * 7 / 24);
  EXPECT_NEAR(w[7 * 25 + 3], h3 * h7, 1e-15);
  for (int j = 0; j < 25; ++j)
    for (int i = 0; i < 25; ++i) EXPECT_DOUBLE_EQ(w[j * 25 + i], w[i * 25 + j]);
}

TEST(Selection, ZeroInfluenceIsPlainArgmax) {
  oracle::Gen g(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> prob(625);
    for (auto& p : prob) p = g.uniform(0, 1);
    const int best = g.range(0, 624);
    prob[best] = 1.5;
    EXPECT_EQ(select_box(prob, constant_reg(8), GridSpec{}, 0.0).index, best);
  }
}

TEST(Selection, UniformScoresPickCenter) {
  const std::vector<double> prob(625, 0.3);
  const auto s = select_box(prob, constant_reg(8), GridSpec{}, 0.4);
  EXPECT_EQ(s.index, 12 * 25 + 12);
  EXPECT_EQ(s.box, (BBox{119.5, 119.5, 135.5, 135.5}));
}

TEST(Selection, WindowPullsTowardCenter) {
  std::vector<double> prob(625, 0.0);
  prob[2 * 25 + 2] = 1.0;
  prob[12 * 25 + 13] = 0.8;
  EXPECT_EQ(select_box(prob, constant_reg(8), GridSpec{}, 0.0).index, 2 * 25 + 2);
  EXPECT_EQ(select_box(prob, constant_reg(8), GridSpec{}, 0.4).index, 12 * 25 + 13);
}

TEST(Selection, SizeSmoothing) {
  const BBox prev = BBox::from_center(50, 50, 20, 10), cand = BBox::from_center(70, 40, 40, 30);
  EXPECT_EQ(smooth_size(prev, cand, 1.0), cand);
  const auto s = smooth_size(prev, cand, 0.3);
  EXPECT_DOUBLE_EQ(s.cx(), 70);
  EXPECT_DOUBLE_EQ(s.cy(), 40);
  EXPECT_NEAR(s.width(), 0.7 * 20 + 0.3 * 40, 1e-12);
  EXPECT_NEAR(s.height(), 0.7 * 10 + 0.3 * 30, 1e-12);
  const auto z = smooth_size(prev, cand, 0.0);
  EXPECT_NEAR(z.width(), 20, 1e-12);
}

TEST(Tracker, InitCachesTemplateOnce) {
  Tracker a(model()), b(model());
  a.init(clip().frames[0], clip().gt[0]);
  b.init(clip().frames[0], clip().gt[0]);
  EXPECT_TRUE(a.initialized());
  EXPECT_EQ(a.frame_count(), 1);
  EXPECT_EQ(a.cache_digest(), b.cache_digest());
  for (int l : model().config().levels.indices()) {
    EXPECT_EQ(a.template_rois().blocks[l].shape(), (Shape{1, 49, 8}));
    EXPECT_EQ(a.template_pyramid().levels[l].shape(), (Shape{8, 7, 7}));
  }
  const uint64_t digest = a.cache_digest();
  for (int f = 1; f < clip().size(); ++f) a.update(clip().frames[f]);
  EXPECT_EQ(a.cache_digest(), digest);
  EXPECT_EQ(a.frame_count(), clip().size());
}

TEST(Tracker, InitErrors) {
  Tracker t(model());
  try {
    t.init(clip().frames[0], BBox{10, 10, 10, 40});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateTarget);
  }
  try {
    t.init(Image{}, clip().gt[0]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
  EXPECT_THROW(t.update(clip().frames[1]), Error);
}

TEST(Tracker, OutputsAreFiniteAndDeterministic) {
  Tracker a(model()), b(model());
  a.init(clip().frames[0], clip().gt[0]);
  b.init(clip().frames[0], clip().gt[0]);
  for (int f = 1; f < clip().size(); ++f) {
    const auto oa = a.update(clip().frames[f]), ob = b.update(clip().frames[f]);
    EXPECT_TRUE(finite_box(oa.box));
    EXPECT_EQ(oa.box, ob.box);
    EXPECT_EQ(oa.confidence, ob.confidence);
    EXPECT_GE(oa.confidence, 0.0);
    EXPECT_LE(oa.confidence, 1.0);
    EXPECT_EQ(oa.diag.evaluated, 64);
    EXPECT_GE(oa.diag.matching, 0.0);
    EXPECT_LE(oa.diag.matching, 1.0);
  }
}

TEST(Tracker, AblationUsesUnitMatchingMap) {
  TrackerOptions opt;
  opt.ablate_no_rd = true;
  Tracker t(model(), opt);
  t.init(clip().frames[0], clip().gt[0]);
  for (int f = 1; f < clip().size(); ++f) {
    const auto o = t.update(clip().frames[f]);
    EXPECT_EQ(o.diag.score_post, o.diag.score_pre);
    EXPECT_EQ(o.diag.matching, 1.0);
    EXPECT_EQ(o.diag.evaluated, 0);
  }
}

TEST(Tracker, BoxStaysInsideFrame) {
  Tracker t(model());
  const Image& frame = clip().frames[0];
  t.init(frame, BBox{0, 0, 30, 30});
  for (int f = 0; f < 4; ++f) {
    const auto o = t.update(frame);
    EXPECT_GE(o.box.cx(), 0.0);
    EXPECT_LE(o.box.cx(), frame.width);
    EXPECT_GE(o.box.width(), 4.0);
    EXPECT_LE(o.box.width(), frame.width);
  }
}

TEST(Tracker, ConfidenceDumps) {
  const auto dir = fs::temp_directory_path() / "srn_tracker_dump";
  fs::remove_all(dir);
  TrackerOptions opt;
  opt.dump_dir = dir;
  Tracker t(model(), opt);
  t.init(clip().frames[0], clip().gt[0]);
  t.update(clip().frames[1]);
  t.update(clip().frames[2]);
  for (const char* name : {"000002_matching.pgm", "000002_cls.pgm", "000003_matching.pgm", "000003_cls.pgm"}) {
    ASSERT_TRUE(fs::exists(dir / name)) << name;
    std::ifstream f(dir / name, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, max = 0;
    f >> magic >> w >> h >> max;
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(w, 25);
    EXPECT_EQ(h, 25);
    EXPECT_EQ(max, 255);
    EXPECT_EQ(fs::file_size(dir / name), static_cast<uintmax_t>(f.tellg()) + 1 + 625);
  }
}
