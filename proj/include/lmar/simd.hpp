#pragma once

// Dense arithmetic kernels behind runtime dispatch.
//
// Each kernel has a scalar reference implementation and, where the build
// target supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The
// active variant is picked once on first use from CPU capabilities; setting
// LMAR_SIMD=scalar in the environment forces the reference path.
//
// Variants agree to rounding, not bit-for-bit: vector lanes reorder the
// summation. Determinism within one process/machine is unaffected.

#include <cstddef>
#include <span>
#include <string_view>

namespace lmar::simd {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa) noexcept;

/// Kernel table. All lengths are element counts; pointers need no alignment.
struct Kernels {
  Isa isa;
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  /// Mixed precision: f32 storage row against an f64 query, f64 accumulation.
  double (*dot_f32_f64)(const float* row, const double* q, std::size_t n);
  /// y += alpha * x
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

const Kernels& scalar_kernels() noexcept;
/// nullptr when the variant is not compiled in or not supported by this CPU.
const Kernels* avx2_kernels() noexcept;
const Kernels* neon_kernels() noexcept;

/// The dispatched table used by the rest of the library.
const Kernels& active() noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot_f64(a.data(), b.data(), a.size());
}

inline double dot(std::span<const float> row, std::span<const double> q) {
  return active().dot_f32_f64(row.data(), q.data(), row.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy_f64(alpha, x.data(), y.data(), x.size());
}

}  // namespace lmar::simd
