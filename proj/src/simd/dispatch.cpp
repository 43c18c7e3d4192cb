#include <atomic>
#include <cstdlib>
#include <cstring>

#include "srn/common.hpp"
#include "srn/simd/kernels.hpp"

namespace srn::simd {
namespace {

Isa detect() {
  if (const char* env = std::getenv("SRN_SIMD"); env && std::strcmp(env, "scalar") == 0)
    return Isa::kScalar;
  return isa_available(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(SRN_WITH_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  SRN_CHECK(isa_available(isa), ErrorCode::kInvalidArgument,
            std::string("ISA not supported on this CPU: ") + isa_name(isa));
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& kernels(Isa isa) {
#if defined(SRN_WITH_AVX2)
  if (isa == Isa::kAvx2) return avx2::table<T>();
#endif
  return scalar::table<T>();
}

template const KernelTable<float>& kernels<float>(Isa);
template const KernelTable<double>& kernels<double>(Isa);

}  // namespace srn::simd
