#pragma once

#include <cstddef>
#include <vector>

// Row-major accumulate-GEMM kernels. All loops run index-ascending so a given
// problem always reduces in the same order.
namespace atgn::kernels {

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    const double* ai = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += Aᵀ · B with A stored [k×m], B stored [k×n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * lda;
    const double* bp = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += A · Bᵀ with A stored [m×k], B stored [n×k]
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
  gemm_nn(m, n, k, a, lda, bt.data(), n, c, ldc);
}

}  // namespace atgn::kernels
