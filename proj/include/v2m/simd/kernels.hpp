#pragma once

// Dense double-precision inner loops used by the tensor and autodiff layers.
//
// Every routine has a portable scalar reference in `base` and, on x86-64, an
// AVX2+FMA variant in `avx2`. `active()` picks one at first use from CPUID;
// setting V2M_SIMD=scalar in the environment forces the reference path.
// Matrices are row-major and every gemm accumulates into C.

#include <cstddef>
#include <string_view>

namespace v2m::simd {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y += a * b (elementwise)
  void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
};

namespace base {
const KernelTable& table();
}

namespace avx2 {
// nullptr when the variant was not compiled in.
const KernelTable* table();
}

bool cpu_has_avx2_fma();

// The table selected for this process. Stable after the first call.
const KernelTable& active();

// Overrides the selection (tests and benchmarks); returns the previous table.
const KernelTable& set_active(const KernelTable& table);

}  // namespace v2m::simd
