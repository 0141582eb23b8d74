#include "lrfr/kernels.hpp"

#include "lrfr/common.hpp"

namespace lrfr::kernels::scalar {

void add(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void axpy(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc) {
  check(!(trans_a && trans_b), "gemm: TT form not supported");
  for (int i = 0; i < m; ++i) {
    double* c_row = C + size_t(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) c_row[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) c_row[j] *= beta;
    }
  }
  if (!trans_a && !trans_b) {
    // C[i,j] += alpha * A[i,p] * B[p,j]
    for (int i = 0; i < m; ++i) {
      const double* a_row = A + size_t(i) * lda;
      double* c_row = C + size_t(i) * ldc;
      for (int p = 0; p < k; ++p) {
        const double av = alpha * a_row[p];
        const double* b_row = B + size_t(p) * ldb;
        for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // C[i,j] += alpha * dot(A[i,:], B[j,:])
    for (int i = 0; i < m; ++i) {
      const double* a_row = A + size_t(i) * lda;
      double* c_row = C + size_t(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const double* b_row = B + size_t(j) * ldb;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
        c_row[j] += alpha * acc;
      }
    }
  } else {
    // C[i,j] += alpha * A[p,i] * B[p,j]
    for (int p = 0; p < k; ++p) {
      const double* a_row = A + size_t(p) * lda;
      const double* b_row = B + size_t(p) * ldb;
      for (int i = 0; i < m; ++i) {
        const double av = alpha * a_row[i];
        double* c_row = C + size_t(i) * ldc;
        for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
      }
    }
  }
}

}  // namespace lrfr::kernels::scalar
