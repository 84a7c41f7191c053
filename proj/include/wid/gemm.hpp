// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace wid {

// Small row-major GEMM kernels. Accumulation order is fixed, so results are
// bit-identical from run to run. Column tiling keeps the B panel resident in
// L2 for the shapes conv2d produces (K up to a few hundred, N up to H*W).

inline constexpr std::int64_t kGemmTile = 256;

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t K, std::int64_t N, const T* a, const T* b, T* c) {
  for (std::int64_t n0 = 0; n0 < N; n0 += kGemmTile) {
    const std::int64_t n1 = std::min(N, n0 + kGemmTile);
    for (std::int64_t m = 0; m < M; ++m) {
      T* crow = c + m * N;
      const T* arow = a + m * K;
      std::int64_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
        const T* b0 = b + k * N;
        const T* b1 = b0 + N;
        const T* b2 = b1 + N;
        const T* b3 = b2 + N;
        for (std::int64_t n = n0; n < n1; ++n)
          crow[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
      }
      for (; k < K; ++k) {
        const T av = arow[k];
        const T* brow = b + k * N;
        for (std::int64_t n = n0; n < n1; ++n) crow[n] += av * brow[n];
      }
    }
  }
}

// c[M,K] += a[M,N] * b[K,N]^T   (rows of a dotted with rows of b)
template <typename T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const T* a, const T* b, T* c) {
  for (std::int64_t n0 = 0; n0 < N; n0 += kGemmTile) {
    const std::int64_t n1 = std::min(N, n0 + kGemmTile);
    for (std::int64_t m = 0; m < M; ++m) {
      const T* arow = a + m * N;
      for (std::int64_t kk = 0; kk < K; ++kk) {
        const T* brow = b + kk * N;
        T acc = T(0);
        for (std::int64_t n = n0; n < n1; ++n) acc += arow[n] * brow[n];
        c[m * K + kk] += acc;
      }
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_tn(std::int64_t M, std::int64_t K, std::int64_t N, const T* a, const T* b, T* c) {
  // Materialize a^T once; the nn kernel then streams it efficiently.
  std::vector<T> at(static_cast<std::size_t>(M * K));
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t k = 0; k < K; ++k) at[static_cast<std::size_t>(k * M + m)] = a[m * K + k];
  gemm_nn(K, M, N, at.data(), b, c);
}

}  // namespace wid
