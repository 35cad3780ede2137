#pragma once

// Dense kernels shared by the autodiff primitives.
//
// Every output element of gemm() is produced by a single chain of fused
// multiply-adds in ascending k, starting from the initial C value. The result
// is therefore identical to a naive triple loop written with std::fma, no
// matter how rows and columns are blocked.

#if defined(__AVX2__) || defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <vector>

namespace ternarylm::kernels {

#if defined(__GNUC__) && defined(__AVX512F__)
#define TERNARYLM_HAVE_SIMD 1
inline constexpr std::size_t kSimdBytes = 64;
#elif defined(__GNUC__) && defined(__AVX2__) && defined(__FMA__)
#define TERNARYLM_HAVE_SIMD 1
inline constexpr std::size_t kSimdBytes = 32;
#endif

#if TERNARYLM_HAVE_SIMD
template <class T>
using simd_t [[gnu::vector_size(kSimdBytes)]] = T;
#endif

namespace detail {

#if TERNARYLM_HAVE_SIMD
/// Lane-wise fused multiply-add, one rounding per lane like std::fma.
template <class T>
inline simd_t<T> fma_lanes(simd_t<T> a, simd_t<T> b, simd_t<T> c) {
#if defined(__AVX512F__)
  if constexpr (sizeof(T) == 4) {
    return reinterpret_cast<simd_t<T>>(_mm512_fmadd_ps(reinterpret_cast<__m512>(a), reinterpret_cast<__m512>(b),
                                                       reinterpret_cast<__m512>(c)));
  } else {
    return reinterpret_cast<simd_t<T>>(_mm512_fmadd_pd(reinterpret_cast<__m512d>(a), reinterpret_cast<__m512d>(b),
                                                       reinterpret_cast<__m512d>(c)));
  }
#else
  if constexpr (sizeof(T) == 4) {
    return reinterpret_cast<simd_t<T>>(_mm256_fmadd_ps(reinterpret_cast<__m256>(a), reinterpret_cast<__m256>(b),
                                                       reinterpret_cast<__m256>(c)));
  } else {
    return reinterpret_cast<simd_t<T>>(_mm256_fmadd_pd(reinterpret_cast<__m256d>(a), reinterpret_cast<__m256d>(b),
                                                       reinterpret_cast<__m256d>(c)));
  }
#endif
}
#endif

template <class T>
inline T load_a(const T* a, std::size_t lda, bool trans_a, std::size_t i, std::size_t k) {
  return trans_a ? a[k * lda + i] : a[i * lda + k];
}

template <class T>
void gemm_scalar_block(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1,
                       std::size_t k_len, const T* a, std::size_t lda, bool trans_a,
                       const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = i0; i < i1; ++i) {
    for (std::size_t j = j0; j < j1; ++j) {
      T acc = c[i * ldc + j];
      for (std::size_t k = 0; k < k_len; ++k) {
        acc = std::fma(load_a(a, lda, trans_a, i, k), b[k * ldb + j], acc);
      }
      c[i * ldc + j] = acc;
    }
  }
}

}  // namespace detail

/// C[m x n] (+)= op(A) * B where op(A) is A[m x k] or, with trans_a, the
/// transpose of a stored A[k x m]. All matrices are row-major with the given
/// leading dimensions. When accumulate is false C is overwritten.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k_len, const T* a, std::size_t lda,
          bool trans_a, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, n * sizeof(T));
  }
  if (m == 0 || n == 0 || k_len == 0) return;
#if TERNARYLM_HAVE_SIMD
  using V = simd_t<T>;
  constexpr std::size_t lanes = sizeof(V) / sizeof(T);
  constexpr std::size_t mr = 8;
  const std::size_t n_main = n - n % lanes;
  // Columns past the last full vector go through a zero-padded copy of B so
  // they also run vectorized; padded lanes are computed and discarded.
  std::vector<T> b_tail;
  if (n_main < n) {
    b_tail.assign(k_len * lanes, T(0));
    for (std::size_t k = 0; k < k_len; ++k)
      std::memcpy(b_tail.data() + k * lanes, b + k * ldb + n_main, (n - n_main) * sizeof(T));
  }
  auto panel = [&]<std::size_t rows>(std::size_t i, std::size_t j, const T* bp, std::size_t ldbp, std::size_t width) {
    V acc[rows];
    for (std::size_t r = 0; r < rows; ++r) {
      acc[r] = V{};
      std::memcpy(&acc[r], c + (i + r) * ldc + j, width * sizeof(T));
    }
    for (std::size_t k = 0; k < k_len; ++k) {
      V bv;
      std::memcpy(&bv, bp + k * ldbp, sizeof(V));
      for (std::size_t r = 0; r < rows; ++r) {
        const V av = detail::load_a(a, lda, trans_a, i + r, k) - V{};
        acc[r] = detail::fma_lanes<T>(av, bv, acc[r]);
      }
    }
    for (std::size_t r = 0; r < rows; ++r) std::memcpy(c + (i + r) * ldc + j, &acc[r], width * sizeof(T));
  };
  std::size_t i = 0;
  for (; i + mr <= m; i += mr) {
    for (std::size_t j = 0; j < n_main; j += lanes) panel.template operator()<mr>(i, j, b + j, ldb, lanes);
    if (n_main < n) panel.template operator()<mr>(i, n_main, b_tail.data(), lanes, n - n_main);
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n_main; j += lanes) panel.template operator()<1>(i, j, b + j, ldb, lanes);
    if (n_main < n) panel.template operator()<1>(i, n_main, b_tail.data(), lanes, n - n_main);
  }
#else
  detail::gemm_scalar_block(0, m, 0, n, k_len, a, lda, trans_a, b, ldb, c, ldc);
#endif
}

/// out[cols x rows] = transpose of in[rows x cols].
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile);
      const std::size_t j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

/// Softmax of one row in place. `valid` leading entries participate; the rest
/// are set to zero. Returns false when valid == 0.
template <class T>
bool softmax_row(T* row, std::size_t len, std::size_t valid) {
  if (valid == 0) return false;
  T mx = row[0];
  for (std::size_t j = 1; j < valid; ++j) mx = row[j] > mx ? row[j] : mx;
  T sum = 0;
  for (std::size_t j = 0; j < valid; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < valid; ++j) row[j] *= inv;
  for (std::size_t j = valid; j < len; ++j) row[j] = 0;
  return true;
}

}  // namespace ternarylm::kernels
