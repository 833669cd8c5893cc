#pragma once

// Arithmetic inner loops. Every kernel has a portable scalar reference
// implementation; x86 builds also carry AVX2+FMA variants selected at
// runtime. The double-precision entry points always run the scalar
// reference (they exist for gradient verification, not for speed).
//
// Within one ISA the result for an output element depends only on its
// column position, never on its row, so a sample produces the same bits
// regardless of where it sits in a batch.

#include <cstddef>
#include <string_view>

namespace fidn::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

// Chosen once at first use: FIDN_ISA=scalar|avx2 if set, otherwise the
// best supported variant.
Isa active_isa();
void set_active_isa(Isa isa);

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n]; all row-major with
// leading dimensions lda, ldb, ldc.
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// y += alpha * x
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

namespace scalar {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define FIDN_HAVE_AVX2_KERNELS 1
namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
float dot(const float* x, const float* y, std::size_t n);
void axpy(std::size_t n, float alpha, const float* x, float* y);
}  // namespace avx2
#else
#define FIDN_HAVE_AVX2_KERNELS 0
#endif

}  // namespace fidn::kernels
