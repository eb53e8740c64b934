#include <cstdlib>
#include <string_view>

#include "lmar/simd.hpp"

namespace lmar::simd {

#if defined(LMAR_HAVE_AVX2)
extern const Kernels kAvx2Kernels;
#endif
#if defined(LMAR_HAVE_NEON)
extern const Kernels kNeonKernels;
#endif

std::string_view to_string(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

const Kernels* avx2_kernels() noexcept {
#if defined(LMAR_HAVE_AVX2)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &kAvx2Kernels;
#endif
  return nullptr;
}

const Kernels* neon_kernels() noexcept {
#if defined(LMAR_HAVE_NEON)
  return &kNeonKernels;
#else
  return nullptr;
#endif
}

namespace {

const Kernels& select() noexcept {
  if (const char* env = std::getenv("LMAR_SIMD"); env && std::string_view(env) == "scalar")
    return scalar_kernels();
  if (const Kernels* k = avx2_kernels()) return *k;
  if (const Kernels* k = neon_kernels()) return *k;
  return scalar_kernels();
}

}  // namespace

const Kernels& active() noexcept {
  static const Kernels& chosen = select();
  return chosen;
}

}  // namespace lmar::simd
