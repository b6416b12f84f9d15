#pragma once

// Row-major GEMM kernels used by matmul and the convolution lowering.
// All variants accumulate into C. Loop orders keep the innermost loop
// contiguous; results are deterministic for a given build.

#include <algorithm>
#include <cstddef>

namespace samamba::detail {

inline constexpr std::size_t kColBlock = 512;

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t jn = std::min(N, j0 + kColBlock) - j0;
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* c0 = C + i * N + j0;
      T* c1 = c0 + N;
      T* c2 = c1 + N;
      T* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a0 = A[i * K + k], a1 = A[(i + 1) * K + k];
        const T a2 = A[(i + 2) * K + k], a3 = A[(i + 3) * K + k];
        const T* b = B + k * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      T* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* b = B + k * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * N + j] += s;
    }
  }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t jn = std::min(N, j0 + kColBlock) - j0;
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N + j0;
      for (std::size_t i = 0; i < M; ++i) {
        const T a = A[k * M + i];
        T* c = C + i * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

}  // namespace samamba::detail
