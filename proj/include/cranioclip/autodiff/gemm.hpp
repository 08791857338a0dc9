#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

namespace cranioclip::ad {

// Row-major C = alpha * op(A) * op(B) + beta * C, op(X) being X or X^T.
//
// op(B) = B^T is materialized and passed untransposed: OpenBLAS 0.3.20's
// small-matrix NT kernel returns wrong dgemm results for k >= ~200.

namespace detail {

template <typename T>
const T* transposed(const T* b, int rows, int cols, int ldb, std::vector<T>& buf) {
  buf.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      buf[static_cast<std::size_t>(c) * rows + r] = b[static_cast<std::size_t>(r) * ldb + c];
  return buf.data();
}

}  // namespace detail

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  thread_local std::vector<float> buf;
  if (trans_b) {
    b = detail::transposed(b, n, k, ldb, buf);
    ldb = n;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, CblasNoTrans, m, n, k, alpha, a,
              lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  thread_local std::vector<double> buf;
  if (trans_b) {
    b = detail::transposed(b, n, k, ldb, buf);
    ldb = n;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, CblasNoTrans, m, n, k, alpha, a,
              lda, b, ldb, beta, c, ldc);
}

}  // namespace cranioclip::ad
