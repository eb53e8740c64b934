#include <arm_neon.h>

#include "lmar/simd.hpp"

namespace lmar::simd {
namespace {

double dot_f64(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double dot_f32_f64(const float* row, const double* q, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float32x4_t r = vld1q_f32(row + i);
    acc0 = vfmaq_f64(acc0, vcvt_f64_f32(vget_low_f32(r)), vld1q_f64(q + i));
    acc1 = vfmaq_f64(acc1, vcvt_high_f64_f32(r), vld1q_f64(q + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += static_cast<double>(row[i]) * q[i];
  return sum;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

extern const Kernels kNeonKernels;
const Kernels kNeonKernels{Isa::Neon, dot_f64, dot_f32_f64, axpy_f64};

}  // namespace lmar::simd
