#include "fidn/kernels.hpp"

#if FIDN_HAVE_AVX2_KERNELS

#include <immintrin.h>

#include <cstdint>

#define FIDN_AVX2 __attribute__((target("avx2,fma")))

namespace fidn::kernels::avx2 {

namespace {

alignas(32) constexpr std::int32_t kMaskTable[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                      0,  0,  0,  0,  0,  0,  0,  0};

// Lanes [0, width) active, width in [1, 8].
FIDN_AVX2 inline __m256i lane_mask(std::size_t width) {
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMaskTable + 8 - width));
}

// R rows x 16 columns.
template <int R>
FIDN_AVX2 void tile16(std::size_t k, const float* a, std::size_t lda, const float* b,
                      std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __m256 lo[R];
  __m256 hi[R];
  for (int r = 0; r < R; ++r) {
    lo[r] = _mm256_setzero_ps();
    hi[r] = _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      lo[r] = _mm256_fmadd_ps(av, b0, lo[r]);
      hi[r] = _mm256_fmadd_ps(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    float* crow = c + r * ldc;
    if (accumulate) {
      lo[r] = _mm256_add_ps(_mm256_loadu_ps(crow), lo[r]);
      hi[r] = _mm256_add_ps(_mm256_loadu_ps(crow + 8), hi[r]);
    }
    _mm256_storeu_ps(crow, lo[r]);
    _mm256_storeu_ps(crow + 8, hi[r]);
  }
}

// R rows x `width` (1..8) columns.
template <int R>
FIDN_AVX2 void tile8(std::size_t k, std::size_t width, const float* a, std::size_t lda,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  const __m256i mask = lane_mask(width);
  __m256 acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 bv = _mm256_maskload_ps(b + p * ldb, mask);
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), bv, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    float* crow = c + r * ldc;
    if (accumulate) acc[r] = _mm256_add_ps(_mm256_maskload_ps(crow, mask), acc[r]);
    _mm256_maskstore_ps(crow, mask, acc[r]);
  }
}

template <int R>
FIDN_AVX2 void row_block(std::size_t k, const float* a, std::size_t lda,
                         const float* b, std::size_t ldb, float* c, std::size_t ldc,
                         std::size_t j0, std::size_t width, bool accumulate) {
  if (width == 16) {
    tile16<R>(k, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
  } else {
    tile8<R>(k, width, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
  }
}

}  // namespace

FIDN_AVX2 void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                    const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  // Column panels outermost so the k x 16 slice of B stays hot across row blocks.
  std::size_t j0 = 0;
  while (j0 < n) {
    const std::size_t remaining = n - j0;
    const std::size_t width = remaining >= 16 ? 16 : (remaining >= 8 ? 8 : remaining);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      row_block<4>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, j0, width, accumulate);
    }
    switch (m - i) {
      case 3: row_block<3>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, j0, width, accumulate); break;
      case 2: row_block<2>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, j0, width, accumulate); break;
      case 1: row_block<1>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, j0, width, accumulate); break;
      default: break;
    }
    j0 += width;
  }
}

FIDN_AVX2 float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    acc = _mm256_fmadd_ps(_mm256_maskload_ps(x + i, mask), _mm256_maskload_ps(y + i, mask), acc);
  }
  const __m128 lo = _mm256_castps256_ps128(acc);
  const __m128 hi = _mm256_extractf128_ps(acc, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x1));
  return _mm_cvtss_f32(s);
}

FIDN_AVX2 void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  if (i < n) {
    const __m256i mask = lane_mask(n - i);
    const __m256 r = _mm256_fmadd_ps(av, _mm256_maskload_ps(x + i, mask), _mm256_maskload_ps(y + i, mask));
    _mm256_maskstore_ps(y + i, mask, r);
  }
}

}  // namespace fidn::kernels::avx2

#endif
