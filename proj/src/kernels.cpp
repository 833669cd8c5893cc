#include "fidn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "fidn/error.hpp"

namespace fidn::kernels {

namespace {

Isa detect() {
  if (const char* forced = std::getenv("FIDN_ISA")) {
    const std::string name(forced);
    if (name == "scalar") return Isa::Scalar;
    if (name == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if FIDN_HAVE_AVX2_KERNELS
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw ValidationError("instruction set " + std::string(isa_name(isa)) + " not supported on this CPU");
  }
  active().store(isa, std::memory_order_relaxed);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
#if FIDN_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::Avx2) return avx2::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#endif
  scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

float dot(const float* x, const float* y, std::size_t n) {
#if FIDN_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::Avx2) return avx2::dot(x, y, n);
#endif
  return scalar::dot(x, y, n);
}

double dot(const double* x, const double* y, std::size_t n) { return scalar::dot(x, y, n); }

void axpy(std::size_t n, float alpha, const float* x, float* y) {
#if FIDN_HAVE_AVX2_KERNELS
  if (active_isa() == Isa::Avx2) return avx2::axpy(n, alpha, x, y);
#endif
  scalar::axpy(n, alpha, x, y);
}

void axpy(std::size_t n, double alpha, const double* x, double* y) { scalar::axpy(n, alpha, x, y); }

}  // namespace fidn::kernels
