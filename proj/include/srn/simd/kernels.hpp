#pragma once

// Data-parallel inner loops used by the tensor ops. Every kernel has a
// portable scalar reference and an AVX2/FMA variant; the variant is picked
// once at startup from the CPU feature bits and can be overridden for
// equivalence testing (or with SRN_SIMD=scalar in the environment).

namespace srn::simd {

enum class Isa { kScalar, kAvx2 };

const char* isa_name(Isa isa);

template <typename T>
struct KernelTable {
  /// C (+)= A * B with A: M x K (row stride lda), B: K x N (ldb), C: M x N (ldc).
  void (*gemm)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
               bool accumulate);
  /// Valid 2-D cross-correlation of an h x w plane with a kh x kw kernel.
  /// Output is (h - kh + 1) x (w - kw + 1), written (or accumulated) densely.
  void (*xcorr2d)(const T* in, int h, int w, const T* kernel, int kh, int kw, T* out,
                  bool accumulate);
  T (*dot)(int n, const T* x, const T* y);
  /// y += alpha * x
  void (*axpy)(int n, T alpha, const T* x, T* y);
};

bool isa_available(Isa isa);
Isa active_isa();
/// Force an ISA. Throws if the CPU cannot run it.
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& kernels(Isa isa);

template <typename T>
const KernelTable<T>& kernels() {
  return kernels<T>(active_isa());
}

namespace scalar {
template <typename T>
const KernelTable<T>& table();
}

namespace avx2 {
template <typename T>
const KernelTable<T>& table();
}

/// RAII override of the active ISA, for tests and benchmarks.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : saved_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(saved_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa saved_;
};

}  // namespace srn::simd
