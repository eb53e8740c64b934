#include "lmar/simd.hpp"

namespace lmar::simd {
namespace {

double dot_f64(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double dot_f32_f64(const float* row, const double* q, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(row[i]) * q[i];
  return sum;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr Kernels kScalar{Isa::Scalar, dot_f64, dot_f32_f64, axpy_f64};

}  // namespace

const Kernels& scalar_kernels() noexcept { return kScalar; }

}  // namespace lmar::simd
