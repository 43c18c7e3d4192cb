#include <gtest/gtest.h>

#include "oracles.hpp"
#include "srn/model.hpp"

using namespace srn;

namespace {

Image noise_image(int w, int h, uint64_t seed) {
  oracle::Gen g(seed);
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(g.range(0, 255));
  return img;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 4;
  c.stem_channels = 4;
  c.mid_channels = 4;
  c.attention_dim = 4;
  c.global_hidden = 6;
  c.local_hidden = 6;
  c.patch_embed = 4;
  return c;
}

Patch random_patch(int size, uint64_t seed) {
  oracle::Gen g(seed);
  Patch p;
  p.size = size;
  p.pixels = Tensor<float>({3, size, size});
  for (auto& v : p.pixels.values()) v = static_cast<float>(g.uniform(0, 1));
  return p;
}

}  // namespace

TEST(Crop, TemplateWorkedExample) {
  const Image frame = noise_image(640, 480, 1);
  const Patch p = crop_template(frame, BBox{100, 100, 150, 150});
  EXPECT_DOUBLE_EQ(context_side(BBox{100, 100, 150, 150}), 100.0);
  EXPECT_EQ(p.size, 127);
  EXPECT_DOUBLE_EQ(p.scale, 1.27);
  const Patch s = crop_search(frame, BBox{100, 100, 150, 150});
  EXPECT_NEAR(255.0 / s.scale, 100.0 * 255.0 / 127.0, 1e-9);
  EXPECT_NEAR(255.0 / s.scale, 200.787, 1e-3);
}

TEST(Crop, IdentityResizeWhenSideMatches) {
  const Image frame = noise_image(300, 300, 2);
  // Square box whose context side is exactly 127, placed so the window
  // starts on a pixel edge at x = y = 87.
  const double w = 127.0 / 2.0;
  const BBox box = BBox::from_center(150.5, 150.5, w, w);
  const Patch p = crop_template(frame, box);
  EXPECT_DOUBLE_EQ(p.scale, 1.0);
  for (int y = 0; y < 127; ++y)
    for (int x = 0; x < 127; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_NEAR(p.pixels.at(c, y, x), frame.px(87 + x, 87 + y)[c] / 255.0, 1e-6);
}

TEST(Crop, CornerPaddingUsesChannelMean) {
  Image frame(64, 48);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      frame.px(x, y)[0] = 200;
      frame.px(x, y)[1] = static_cast<uint8_t>(x < 32 ? 0 : 100);
      frame.px(x, y)[2] = 10;
    }
  const Patch p = crop_template(frame, BBox{0, 0, 10, 10});
  EXPECT_TRUE(p.padded);
  EXPECT_FALSE(p.outside_frame);
  EXPECT_NEAR(p.pixels.at(0, 0, 0), 200 / 255.0, 1e-6);
  EXPECT_NEAR(p.pixels.at(1, 0, 0), 50 / 255.0, 1e-6);
  EXPECT_NEAR(p.pixels.at(2, 0, 0), 10 / 255.0, 1e-6);
}

TEST(Crop, FullyOutsideWindowIsAllMean) {
  const Image frame = noise_image(100, 80, 3);
  const Patch p = crop_search(frame, BBox{1000, 1000, 1010, 1010});
  EXPECT_TRUE(p.outside_frame);
  std::array<double, 3> mean{};
  for (size_t i = 0; i < frame.pixels.size(); ++i) mean[i % 3] += frame.pixels[i];
  for (int c = 0; c < 3; ++c)
    EXPECT_NEAR(p.pixels.at(c, 100, 100), mean[c] / (100.0 * 80.0 * 255.0), 1e-5);
}

TEST(Crop, EmptyFrameRejected) {
  try {
    crop_template(Image{}, BBox{0, 0, 5, 5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(Crop, AffineRoundTrip) {
  oracle::Gen g(4);
  const Image frame = noise_image(320, 240, 4);
  for (int t = 0; t < 200; ++t) {
    const BBox box = g.box(-50, 300, 4, 120);
    const Patch s = crop_search(frame, box);
    EXPECT_NEAR(s.to_frame_x(127.5), box.cx(), 1e-4);
    EXPECT_NEAR(s.to_frame_y(127.5), box.cy(), 1e-4);
    const double fx = g.uniform(-100, 400), fy = g.uniform(-100, 400);
    EXPECT_NEAR(s.to_frame_x(s.to_patch_x(fx)), fx, 1e-4);
    EXPECT_NEAR(s.to_frame_y(s.to_patch_y(fy)), fy, 1e-4);
  }
}

TEST(Backbone, PyramidShapes) {
  ModelConfig cfg;
  cfg.channels = 8;
  Model<float> m(cfg);
  const auto z = extract_pyramid(m.backbone(), random_patch(127, 1), Role::kTemplate);
  const auto x = extract_pyramid(m.backbone(), random_patch(255, 2), Role::kSearch);
  for (int l = 0; l < kNumLevels; ++l) {
    EXPECT_EQ(z.levels[l].shape(), (Shape{8, 7, 7}));
    EXPECT_EQ(z.full[l].shape(), (Shape{8, 15, 15}));
    EXPECT_EQ(x.levels[l].shape(), (Shape{8, 31, 31}));
  }
  EXPECT_EQ(kCorrSize, kSearchFeature - kTemplateFeature + 1);
}

TEST(Backbone, WrongPatchSizeRejected) {
  Model<float> m(ModelConfig{});
  EXPECT_THROW(extract_pyramid(m.backbone(), random_patch(128, 1), Role::kTemplate), Error);
  EXPECT_THROW(extract_pyramid(m.backbone(), random_patch(127, 1), Role::kSearch), Error);
}

TEST(Backbone, ZeroInputFiniteAndDeterministic) {
  Model<float> a(ModelConfig{}), b(ModelConfig{});
  Patch zero = random_patch(255, 1);
  zero.pixels.zero();
  const auto pa = extract_pyramid(a.backbone(), zero, Role::kSearch);
  const auto pb = extract_pyramid(b.backbone(), zero, Role::kSearch);
  for (int l = 0; l < kNumLevels; ++l) {
    for (float v : pa.levels[l].value().values()) ASSERT_TRUE(std::isfinite(v));
    EXPECT_TRUE(pa.levels[l].value() == pb.levels[l].value());
  }
}

TEST(Backbone, FeatureCoordinateMapping) {
  EXPECT_DOUBLE_EQ(feature_to_patch(patch_to_feature(91.25)), 91.25);
  EXPECT_DOUBLE_EQ(feature_to_patch(0), 7.5);
  // Correlation cell i sits at the center of search cell i + 3.
  EXPECT_DOUBLE_EQ(feature_to_patch(3), GridSpec{}.px(0));
}

TEST(Xcorr, OracleOnRandomShapes) {
  oracle::Gen g(5);
  for (int t = 0; t < 20; ++t) {
    const int c = g.range(1, 8), h = g.range(7, 35), w = g.range(7, 35), kh = g.range(1, 7), kw = g.range(1, 7);
    const auto x = ag::Var<float>::constant(g.tensor<float>({c, h, w}));
    const auto k = ag::Var<float>::constant(g.tensor<float>({c, kh, kw}));
    const auto out = ag::depthwise_xcorr(x, k);
    const auto ref = oracle::xcorr_triple_loop(x.value(), k.value());
    ASSERT_EQ(out.shape(), ref.shape());
    for (size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out.value()[i], ref[i], 1e-5 * (1 + std::abs(ref[i])));
  }
}

TEST(Xcorr, ImpulseZeroAndLinearity) {
  oracle::Gen g(6);
  const auto x = ag::Var<float>::constant(g.tensor<float>({3, 31, 31}));
  const auto y = ag::Var<float>::constant(g.tensor<float>({3, 31, 31}));
  Tensor<float> impulse({3, 7, 7});
  for (int c = 0; c < 3; ++c) impulse.at(c, 3, 3) = 1.0f;
  const auto out = depthwise_xcorr_level(x, ag::Var<float>::constant(impulse));
  ASSERT_EQ(out.shape(), (Shape{3, 25, 25}));
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 25; ++j)
      for (int i = 0; i < 25; ++i) ASSERT_EQ(out.value().at(c, j, i), x.value().at(c, j + 3, i + 3));
  const auto zero = depthwise_xcorr_level(x, ag::Var<float>::constant(Tensor<float>({3, 7, 7})));
  for (float v : zero.value().values()) ASSERT_EQ(v, 0.0f);
  const auto k = ag::Var<float>::constant(g.tensor<float>({3, 7, 7}));
  const auto sum = depthwise_xcorr_level(ag::add(x, y), k);
  const auto a = depthwise_xcorr_level(x, k), b = depthwise_xcorr_level(y, k);
  for (size_t i = 0; i < sum.value().size(); ++i) ASSERT_NEAR(sum.value()[i], a.value()[i] + b.value()[i], 1e-4);
  EXPECT_THROW(depthwise_xcorr_level(x, ag::Var<float>::constant(Tensor<float>({2, 7, 7}))), Error);
}

TEST(Head, OutputsAndEqualInitialWeights) {
  ModelConfig cfg;
  cfg.channels = 8;
  Model<float> m(cfg);
  const auto z = extract_pyramid(m.backbone(), random_patch(127, 7), Role::kTemplate);
  const auto x = extract_pyramid(m.backbone(), random_patch(255, 8), Role::kSearch);
  const auto co = m.head().forward(z, x);
  ASSERT_EQ(co.cls.shape(), (Shape{8, 25, 25}));
  ASSERT_EQ(co.reg_all.shape(), (Shape{4, 25, 25}));
  for (float v : co.reg_all.value().values()) ASSERT_GT(v, 0.0f);
  ASSERT_EQ(co.cls_weights.size(), 3u);
  for (float w : co.cls_weights) EXPECT_NEAR(w, 1.0f / 3.0f, 1e-7);
  for (size_t i = 0; i < co.cls.value().size(); ++i) {
    const float mean = (co.cls_corr[0].value()[i] + co.cls_corr[1].value()[i] + co.cls_corr[2].value()[i]) / 3.0f;
    ASSERT_NEAR(co.cls.value()[i], mean, 1e-5f * (1 + std::abs(mean)));
  }
}

TEST(Head, SingleLevelConfig) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.levels = LevelSet::parse("L4");
  Model<float> m(cfg);
  const auto z = extract_pyramid(m.backbone(), random_patch(127, 9), Role::kTemplate);
  const auto x = extract_pyramid(m.backbone(), random_patch(255, 10), Role::kSearch);
  const auto co = m.head().forward(z, x);
  EXPECT_FALSE(co.cls_corr[0].defined());
  EXPECT_TRUE(co.cls_corr[1].defined());
  EXPECT_EQ(co.cls_weights.size(), 1u);
  EXPECT_TRUE(co.cls.value() == co.cls_corr[1].value());
}

TEST(Head, GradientMatchesFiniteDifferences) {
  Model<double> m(tiny_config());
  // Zero-initialized biases put ReLU inputs exactly on the kink wherever the
  // incoming features are zero; move them off it.
  oracle::Gen gb(14);
  for (auto& p : m.params().params())
    if (p.name.ends_with(".bias"))
      for (auto& v : p.var.mutable_value().values()) v += gb.uniform(0.05, 0.2);
  const auto z = extract_pyramid(m.backbone(), random_patch(127, 11), Role::kTemplate);
  const auto x = extract_pyramid(m.backbone(), random_patch(255, 12), Role::kSearch);
  oracle::Gen g(13);
  const auto rc = ag::Var<double>::constant(g.tensor<double>({4, 25, 25}));
  const auto rr = ag::Var<double>::constant(g.tensor<double>({4, 25, 25}, 0.1));
  const auto loss = [&] {
    const auto co = m.head().forward(z, x);
    return ag::add(ag::sum(ag::mul(co.cls, rc)), ag::sum(ag::mul(co.reg_all, rr)));
  };
  for (const char* name : {"head.L4.reg_out.weight", "head.L4.reg_out.bias", "head.reg_level_logits",
                           "head.cls_level_logits", "head.L5.cls_x.weight", "head.L3.reg_z.bias", "head.L3.reg_z.weight", "head.L3.cls_z.bias", "head.L3.reg_x.bias", "head.L3.cls_x.bias", "head.L3.reg_tower.bias", "head.L4.reg_z.bias"}) {
    const auto* p = m.params().find(name);
    ASSERT_NE(p, nullptr) << name;
    m.params().zero_grad();
    EXPECT_LT(oracle::grad_check(p->var, loss, 1e-6, 1e-3), 1e-4) << name;
  }
}

TEST(Model, ParameterBudget) {
  ModelConfig cfg;
  cfg.channels = 32;
  Model<float> small(cfg);
  EXPECT_LT(small.params().count(), 150000u);
  Model<float> base(ModelConfig{});
  EXPECT_GT(base.params().count(), small.params().count());
}
