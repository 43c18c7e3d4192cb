#include "srn/simd/kernels.hpp"

namespace srn::simd::scalar {
namespace {

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<long>(i) * ldc;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<long>(i) * lda + p];
      const T* brow = b + static_cast<long>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void xcorr2d(const T* in, int h, int w, const T* kernel, int kh, int kw, T* out,
             bool accumulate) {
  const int oh = h - kh + 1;
  const int ow = w - kw + 1;
  for (int y = 0; y < oh; ++y) {
    T* orow = out + static_cast<long>(y) * ow;
    if (!accumulate)
      for (int x = 0; x < ow; ++x) orow[x] = T(0);
    for (int ky = 0; ky < kh; ++ky) {
      const T* irow = in + static_cast<long>(y + ky) * w;
      for (int kx = 0; kx < kw; ++kx) {
        const T kv = kernel[ky * kw + kx];
        for (int x = 0; x < ow; ++x) orow[x] += kv * irow[x + kx];
      }
    }
  }
}

template <typename T>
T dot(int n, const T* x, const T* y) {
  T s = 0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
  static const KernelTable<T> t{&gemm<T>, &xcorr2d<T>, &dot<T>, &axpy<T>};
  return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace srn::simd::scalar
