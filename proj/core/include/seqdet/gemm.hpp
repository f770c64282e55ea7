#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

#include "seqdet/parallel.hpp"

namespace seqdet {

// Dense matrix kernels used by the convolution ops. All accumulation runs in
// a fixed order (k ascending, fused multiply-add throughout), and the
// parallel split assigns whole output rows to workers, so results are bitwise
// identical for any worker count and for any column tiling of the same data.

namespace detail {

template <typename T>
inline void axpy(T a, const T* x, T* acc, std::int64_t n) {
  for (std::int64_t j = 0; j < n; ++j) acc[j] = std::fma(a, x[j], acc[j]);
}

// Eight independent accumulation lanes; lane assignment depends only on the
// element index, so the reduction order is fixed for a given length.
template <typename T>
inline T dot(const T* a, const T* b, std::int64_t n) {
  T lanes[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  std::int64_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int l = 0; l < 8; ++l) lanes[l] = std::fma(a[j + l], b[j + l], lanes[l]);
  for (int l = 0; j < n; ++j, ++l) lanes[l] = std::fma(a[j], b[j], lanes[l]);
  T s01 = lanes[0] + lanes[1];
  T s23 = lanes[2] + lanes[3];
  T s45 = lanes[4] + lanes[5];
  T s67 = lanes[6] + lanes[7];
  return (s01 + s23) + (s45 + s67);
}

constexpr std::int64_t kTile = 256;

}  // namespace detail

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N,
          bool accumulate = false) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    T acc[detail::kTile];
    for (std::int64_t m = m0; m < m1; ++m) {
      const T* a_row = A + m * K;
      T* c_row = C + m * N;
      for (std::int64_t n0 = 0; n0 < N; n0 += detail::kTile) {
        const std::int64_t w = (N - n0 < detail::kTile) ? (N - n0) : detail::kTile;
        if (accumulate)
          std::memcpy(acc, c_row + n0, sizeof(T) * static_cast<size_t>(w));
        else
          std::memset(acc, 0, sizeof(T) * static_cast<size_t>(w));
        const T* b_ptr = B + n0;
        for (std::int64_t k = 0; k < K; ++k, b_ptr += N) detail::axpy(a_row[k], b_ptr, acc, w);
        std::memcpy(c_row + n0, acc, sizeof(T) * static_cast<size_t>(w));
      }
    }
  });
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <typename T>
void gemm_at_b(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N,
               bool accumulate = false) {
  parallel_for(K, [&](std::int64_t k0, std::int64_t k1) {
    T acc[detail::kTile];
    for (std::int64_t k = k0; k < k1; ++k) {
      T* c_row = C + k * N;
      for (std::int64_t n0 = 0; n0 < N; n0 += detail::kTile) {
        const std::int64_t w = (N - n0 < detail::kTile) ? (N - n0) : detail::kTile;
        if (accumulate)
          std::memcpy(acc, c_row + n0, sizeof(T) * static_cast<size_t>(w));
        else
          std::memset(acc, 0, sizeof(T) * static_cast<size_t>(w));
        for (std::int64_t m = 0; m < M; ++m) detail::axpy(A[m * K + k], B + m * N + n0, acc, w);
        std::memcpy(c_row + n0, acc, sizeof(T) * static_cast<size_t>(w));
      }
    }
  });
}

// C[M,P] (+)= A[M,N] * B[P,N]^T
template <typename T>
void gemm_abt(const T* A, const T* B, T* C, std::int64_t M, std::int64_t N, std::int64_t P,
              bool accumulate = false) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    for (std::int64_t m = m0; m < m1; ++m) {
      const T* a_row = A + m * N;
      T* c_row = C + m * P;
      for (std::int64_t p = 0; p < P; ++p) {
        const T d = detail::dot(a_row, B + p * N, N);
        c_row[p] = accumulate ? c_row[p] + d : d;
      }
    }
  });
}

}  // namespace seqdet
