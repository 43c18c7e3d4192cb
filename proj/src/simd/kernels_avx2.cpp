// Compiled with -mavx2 -mfma. Only reached through the dispatch table after
// a runtime CPU check, so nothing here may be called unconditionally.

#include <immintrin.h>

#include "srn/simd/kernels.hpp"

namespace srn::simd::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr int kWidth = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr int kWidth = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

// 4 x (2 * width) register block, accumulated over the full K extent.
template <typename T>
inline void block_4x2(int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                      bool accumulate) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  typename V::reg c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = V::load(c), c01 = V::load(c + W);
    c10 = V::load(c + ldc), c11 = V::load(c + ldc + W);
    c20 = V::load(c + 2 * ldc), c21 = V::load(c + 2 * ldc + W);
    c30 = V::load(c + 3 * ldc), c31 = V::load(c + 3 * ldc + W);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = V::zero();
  }
  const T* a0 = a;
  const T* a1 = a + lda;
  const T* a2 = a + 2 * lda;
  const T* a3 = a + 3 * lda;
  for (int p = 0; p < k; ++p) {
    const T* bp = b + static_cast<long>(p) * ldb;
    const auto b0 = V::load(bp);
    const auto b1 = V::load(bp + W);
    auto av = V::set1(a0[p]);
    c00 = V::fma(av, b0, c00);
    c01 = V::fma(av, b1, c01);
    av = V::set1(a1[p]);
    c10 = V::fma(av, b0, c10);
    c11 = V::fma(av, b1, c11);
    av = V::set1(a2[p]);
    c20 = V::fma(av, b0, c20);
    c21 = V::fma(av, b1, c21);
    av = V::set1(a3[p]);
    c30 = V::fma(av, b0, c30);
    c31 = V::fma(av, b1, c31);
  }
  V::store(c, c00), V::store(c + W, c01);
  V::store(c + ldc, c10), V::store(c + ldc + W, c11);
  V::store(c + 2 * ldc, c20), V::store(c + 2 * ldc + W, c21);
  V::store(c + 3 * ldc, c30), V::store(c + 3 * ldc + W, c31);
}

template <typename T>
inline void row_x1(int k, const T* a, const T* b, int ldb, T* c, bool accumulate) {
  using V = Vec<T>;
  auto acc = accumulate ? V::load(c) : V::zero();
  for (int p = 0; p < k; ++p) acc = V::fma(V::set1(a[p]), V::load(b + static_cast<long>(p) * ldb), acc);
  V::store(c, acc);
}

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate) {
  constexpr int W = Vec<T>::kWidth;
  int j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    int i = 0;
    for (; i + 4 <= m; i += 4)
      block_4x2(k, a + static_cast<long>(i) * lda, lda, b + j, ldb, c + static_cast<long>(i) * ldc + j, ldc,
                accumulate);
    for (; i < m; ++i) {
      row_x1(k, a + static_cast<long>(i) * lda, b + j, ldb, c + static_cast<long>(i) * ldc + j, accumulate);
      row_x1(k, a + static_cast<long>(i) * lda, b + j + W, ldb, c + static_cast<long>(i) * ldc + j + W,
             accumulate);
    }
  }
  for (; j + W <= n; j += W)
    for (int i = 0; i < m; ++i)
      row_x1(k, a + static_cast<long>(i) * lda, b + j, ldb, c + static_cast<long>(i) * ldc + j, accumulate);
  if (j < n) {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<long>(i) * ldc;
      const T* arow = a + static_cast<long>(i) * lda;
      for (int jj = j; jj < n; ++jj) {
        T s = accumulate ? crow[jj] : T(0);
        for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<long>(p) * ldb + jj];
        crow[jj] = s;
      }
    }
  }
}

template <typename T>
void xcorr2d(const T* in, int h, int w, const T* kernel, int kh, int kw, T* out,
             bool accumulate) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  const int oh = h - kh + 1;
  const int ow = w - kw + 1;
  for (int y = 0; y < oh; ++y) {
    T* orow = out + static_cast<long>(y) * ow;
    int x = 0;
    for (; x + W <= ow; x += W) {
      auto acc = accumulate ? V::load(orow + x) : V::zero();
      for (int ky = 0; ky < kh; ++ky) {
        const T* irow = in + static_cast<long>(y + ky) * w + x;
        const T* krow = kernel + ky * kw;
        for (int kx = 0; kx < kw; ++kx) acc = V::fma(V::set1(krow[kx]), V::load(irow + kx), acc);
      }
      V::store(orow + x, acc);
    }
    for (; x < ow; ++x) {
      T s = accumulate ? orow[x] : T(0);
      for (int ky = 0; ky < kh; ++ky) {
        const T* irow = in + static_cast<long>(y + ky) * w + x;
        for (int kx = 0; kx < kw; ++kx) s += kernel[ky * kw + kx] * irow[kx];
      }
      orow[x] = s;
    }
  }
}

template <typename T>
T dot(int n, const T* x, const T* y) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  auto acc = V::zero();
  int i = 0;
  for (; i + W <= n; i += W) acc = V::fma(V::load(x + i), V::load(y + i), acc);
  T s = V::hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy(int n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  const auto av = V::set1(alpha);
  int i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
  static const KernelTable<T> t{&gemm<T>, &xcorr2d<T>, &dot<T>, &axpy<T>};
  return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace srn::simd::avx2
