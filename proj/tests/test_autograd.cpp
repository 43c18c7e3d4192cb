#include <gtest/gtest.h>

#include "oracles.hpp"
#include "srn/autograd.hpp"
#include "srn/simd/kernels.hpp"

using namespace srn;
using V = ag::Var<double>;

namespace {

V leaf(oracle::Gen& g, const Shape& s, double scale = 1.0) { return V::leaf(g.tensor<double>(s, scale), true); }

/// Scalar probe: sum(out * r) with a fixed random r, so every output entry
/// contributes a distinct weight to the checked gradient.
V probe(const V& out, uint64_t seed = 99) {
  oracle::Gen g(seed);
  const auto r = V::constant(g.tensor<double>(out.shape()));
  return ag::sum(ag::mul(out, r));
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Autograd, ElementwiseGradients) {
  oracle::Gen g(1);
  auto a = leaf(g, {3, 4}), b = leaf(g, {3, 4});
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::mul(ag::add(a, b), ag::sub(a, b))); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::sigmoid(ag::scale(a, 1.7))); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::exp(ag::add_scalar(a, -0.5))); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return ag::mean(ag::relu(a)); }), 1e-6);
}

TEST(Autograd, LinearAlgebraGradients) {
  oracle::Gen g(2);
  auto x = leaf(g, {5, 6}), w = leaf(g, {4, 6}), b = leaf(g, {4});
  EXPECT_LT(oracle::grad_check(x, [&] { return probe(ag::linear(x, w, b)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(w, [&] { return probe(ag::linear(x, w, b)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(b, [&] { return probe(ag::linear(x, w, b)); }), 1e-6);
  auto p = leaf(g, {2, 3, 4}), q = leaf(g, {2, 4, 5}), r = leaf(g, {2, 6, 4});
  EXPECT_LT(oracle::grad_check(p, [&] { return probe(ag::bmm(p, q)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(q, [&] { return probe(ag::bmm(p, q)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(p, [&] { return probe(ag::bmm_nt(p, r)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(r, [&] { return probe(ag::bmm_nt(p, r)); }), 1e-6);
  auto s = leaf(g, {3, 7});
  EXPECT_LT(oracle::grad_check(s, [&] { return probe(ag::softmax_lastdim(s)); }), 1e-6);
}

TEST(Autograd, ShapeAndGatherGradients) {
  oracle::Gen g(3);
  auto a = leaf(g, {4, 3}), b = leaf(g, {4, 2});
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::concat_last(a, b)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::slice_last(a, 1, 2)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::index_select(a, {3, 0, 3, 1})); }), 1e-6);
  EXPECT_LT(oracle::grad_check(a, [&] { return probe(ag::concat_batch<double>({a, a})); }), 1e-6);
  auto f = leaf(g, {3, 6, 6}), m = leaf(g, {6, 6});
  EXPECT_LT(oracle::grad_check(f, [&] { return probe(ag::center_crop(f, 2)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(f, [&] { return probe(ag::mul_channel_broadcast(f, m)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(m, [&] { return probe(ag::mul_channel_broadcast(f, m)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(f, [&] { return probe(ag::gather_positions(f, {0, 7, 35, 7})); }), 1e-6);
  auto x = leaf(g, {5, 3}), s = leaf(g, {5});
  EXPECT_LT(oracle::grad_check(s, [&] { return probe(ag::mul_rows(x, s)); }), 1e-6);
  auto l0 = leaf(g, {2, 3}), l1 = leaf(g, {2, 3}), logits = leaf(g, {2});
  EXPECT_LT(oracle::grad_check(logits, [&] { return probe(ag::softmax_weighted_sum<double>({l0, l1}, logits)); }),
            1e-6);
  EXPECT_LT(oracle::grad_check(l1, [&] { return probe(ag::softmax_weighted_sum<double>({l0, l1}, logits)); }), 1e-6);
}

TEST(Autograd, PoolPositionsMatchesMatmul) {
  oracle::Gen g(4);
  auto x = leaf(g, {2, 6, 3});
  const auto pool = g.tensor<double>({4, 6});
  const auto out = ag::pool_positions(x, pool);
  for (int b = 0; b < 2; ++b) {
    Tensor<double> xb({6, 3});
    std::copy_n(x.value().data() + b * 18, 18, xb.data());
    const auto ref = oracle::matmul_naive(pool, xb);
    for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[b * 12 + i], ref[i], 1e-12);
  }
  EXPECT_LT(oracle::grad_check(x, [&] { return probe(ag::pool_positions(x, pool)); }), 1e-6);
}

TEST(Autograd, ConvolutionMatchesDirectOracle) {
  oracle::Gen g(5);
  struct Case {
    int ci, co, h, k, stride, pad, dil;
  };
  for (const Case c : {Case{3, 4, 11, 3, 2, 0, 1}, Case{2, 3, 9, 3, 1, 2, 2}, Case{4, 2, 13, 3, 1, 4, 4},
                       Case{3, 5, 8, 1, 1, 0, 1}}) {
    auto x = leaf(g, {c.ci, c.h, c.h}), w = leaf(g, {c.co, c.ci, c.k, c.k}), b = leaf(g, {c.co});
    const ag::Conv2dOptions opt{c.stride, c.pad, c.dil};
    const auto out = ag::conv2d(x, w, b, opt);
    const auto bias = b.value();
    const auto ref = oracle::conv_direct(x.value(), w.value(), &bias, c.stride, c.pad, c.dil);
    ASSERT_EQ(out.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(out.value(), ref), 1e-10);
    EXPECT_LT(oracle::grad_check(x, [&] { return probe(ag::conv2d(x, w, b, opt)); }), 1e-5);
    EXPECT_LT(oracle::grad_check(w, [&] { return probe(ag::conv2d(x, w, b, opt)); }), 1e-5);
    EXPECT_LT(oracle::grad_check(b, [&] { return probe(ag::conv2d(x, w, b, opt)); }), 1e-5);
  }
}

TEST(Autograd, DepthwiseXcorrOracleAndGradient) {
  oracle::Gen g(6);
  auto x = leaf(g, {3, 9, 10}), k = leaf(g, {3, 4, 3});
  const auto out = ag::depthwise_xcorr(x, k);
  EXPECT_LT(max_abs_diff(out.value(), oracle::xcorr_triple_loop(x.value(), k.value())), 1e-12);
  EXPECT_LT(oracle::grad_check(x, [&] { return probe(ag::depthwise_xcorr(x, k)); }), 1e-6);
  EXPECT_LT(oracle::grad_check(k, [&] { return probe(ag::depthwise_xcorr(x, k)); }), 1e-6);
}

TEST(Autograd, LossesAndTheirGradients) {
  oracle::Gen g(7);
  auto logits = leaf(g, {6, 2});
  const std::vector<int> labels{0, 1, 1, 0, 1, 0};
  const double ce = ag::cross_entropy(logits, labels).item();
  double ref = 0;
  for (int i = 0; i < 6; ++i) {
    const double a = logits.value().at(i, 0), b = logits.value().at(i, 1);
    const double lse = std::log(std::exp(a) + std::exp(b));
    ref += lse - (labels[i] ? b : a);
  }
  EXPECT_NEAR(ce, ref / 6, 1e-12);
  EXPECT_LT(oracle::grad_check(logits, [&] { return ag::cross_entropy(logits, labels); }), 1e-6);

  auto r = leaf(g, {4});
  const std::vector<double> y{1, 0, 0, 1};
  double m = 0;
  for (int i = 0; i < 4; ++i) m += std::pow(r.value()[i] - y[i], 2);
  EXPECT_NEAR(ag::mse(r, y).item(), m / 4, 1e-12);
  EXPECT_LT(oracle::grad_check(r, [&] { return ag::mse(r, y); }), 1e-6);
}

TEST(Autograd, IouLossLtrbValuesAndGradient) {
  // Anchor at the origin: (l, t, r, b) = (-x0, -y0, x1, y1).
  const auto as_ltrb = [](const BBox& b) { return std::vector<double>{-b.x0, -b.y0, b.x1, b.y1}; };
  const BBox gt{-1, -1, 1, 1};
  for (const auto& [pred, expected] : std::vector<std::pair<BBox, double>>{
           {{-1, -1, 1, 1}, 0.0}, {{0, 0, 2, 2}, 6.0 / 7.0}}) {
    auto p = V::leaf(Tensor<double>({1, 4}, as_ltrb(pred)), true);
    EXPECT_NEAR(ag::iou_loss_ltrb(p, Tensor<double>({1, 4}, as_ltrb(gt))).item(), expected, 1e-9);
  }
  oracle::Gen g(8);
  Tensor<double> pred({8, 4}), target({8, 4});
  for (auto& v : pred.values()) v = g.uniform(1, 10);
  for (auto& v : target.values()) v = g.uniform(1, 10);
  auto p = V::leaf(pred, true);
  EXPECT_LT(oracle::grad_check(p, [&] { return ag::iou_loss_ltrb(p, target); }), 1e-4);
}

TEST(Autograd, NoGradBuildsNoGraph) {
  oracle::Gen g(9);
  auto a = leaf(g, {3});
  ag::NoGradGuard guard;
  EXPECT_FALSE(ag::grad_enabled());
  const auto out = ag::mul(a, a);
  EXPECT_FALSE(out.requires_grad());
}

// ---- SIMD variants -------------------------------------------------------

TEST(Simd, VariantsMatchScalarReference) {
  if (!simd::isa_available(simd::Isa::kAvx2)) GTEST_SKIP() << "AVX2 not available";
  oracle::Gen g(10);
  const auto& ref = simd::kernels<float>(simd::Isa::kScalar);
  const auto& vec = simd::kernels<float>(simd::Isa::kAvx2);
  for (int t = 0; t < 40; ++t) {
    const int m = g.range(1, 37), n = g.range(1, 41), k = g.range(1, 29);
    const auto a = g.tensor<float>({m, k}), b = g.tensor<float>({k, n});
    auto c0 = g.tensor<float>({m, n});
    auto c1 = c0;
    const bool acc = g.coin();
    ref.gemm(m, n, k, a.data(), k, b.data(), n, c0.data(), n, acc);
    vec.gemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, acc);
    for (size_t i = 0; i < c0.size(); ++i) ASSERT_NEAR(c0[i], c1[i], 1e-4f * (1 + std::abs(c0[i])));

    const int h = g.range(3, 40), w = g.range(3, 40), kh = g.range(1, std::min(h, 9)), kw = g.range(1, std::min(w, 9));
    const auto in = g.tensor<float>({h, w}), ker = g.tensor<float>({kh, kw});
    Tensor<float> o0({h - kh + 1, w - kw + 1}), o1({h - kh + 1, w - kw + 1});
    ref.xcorr2d(in.data(), h, w, ker.data(), kh, kw, o0.data(), false);
    vec.xcorr2d(in.data(), h, w, ker.data(), kh, kw, o1.data(), false);
    for (size_t i = 0; i < o0.size(); ++i) ASSERT_NEAR(o0[i], o1[i], 1e-4f * (1 + std::abs(o0[i])));

    const int len = g.range(1, 300);
    const auto x = g.tensor<float>({len}), y = g.tensor<float>({len});
    EXPECT_NEAR(ref.dot(len, x.data(), y.data()), vec.dot(len, x.data(), y.data()), 1e-3f);
    auto y0 = y, y1 = y;
    ref.axpy(len, 0.37f, x.data(), y0.data());
    vec.axpy(len, 0.37f, x.data(), y1.data());
    for (int i = 0; i < len; ++i) ASSERT_NEAR(y0[i], y1[i], 1e-5f);
  }
}

TEST(Simd, OpsAgreeAcrossIsas) {
  if (!simd::isa_available(simd::Isa::kAvx2)) GTEST_SKIP() << "AVX2 not available";
  oracle::Gen g(11);
  const auto x = ag::Var<float>::constant(g.tensor<float>({8, 31, 31}));
  const auto w = ag::Var<float>::constant(g.tensor<float>({6, 8, 3, 3}));
  const auto k = ag::Var<float>::constant(g.tensor<float>({8, 7, 7}));
  Tensor<float> conv[2], corr[2];
  int i = 0;
  for (auto isa : {simd::Isa::kScalar, simd::Isa::kAvx2}) {
    simd::ScopedIsa scope(isa);
    conv[i] = ag::conv2d(x, w, ag::Var<float>(), {1, 2, 2}).value();
    corr[i] = ag::depthwise_xcorr(x, k).value();
    ++i;
  }
  for (size_t j = 0; j < conv[0].size(); ++j) ASSERT_NEAR(conv[0][j], conv[1][j], 1e-4f);
  for (size_t j = 0; j < corr[0].size(); ++j) ASSERT_NEAR(corr[0][j], corr[1][j], 1e-4f);
}
