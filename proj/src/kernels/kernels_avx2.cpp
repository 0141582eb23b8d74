#include "lrfr/kernels.hpp"

#ifdef LRFR_HAVE_AVX2_BUILD

#include <immintrin.h>

#include "lrfr/common.hpp"

namespace lrfr::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

}  // namespace

void add(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* out, size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  }
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy(double alpha, const double* x, double* y, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                               _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* a, const double* b, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return hsum(_mm256_add_pd(acc0, acc1)) + tail;
}

double sum(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return hsum(acc) + tail;
}

namespace {

// C[i,:] += av * B[p,:] over a full row, 16 doubles per step.
inline void fma_row(double av, const double* b_row, double* c_row, int n) {
  const __m256d va = _mm256_set1_pd(av);
  int j = 0;
  for (; j + 16 <= n; j += 16) {
    _mm256_storeu_pd(c_row + j,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b_row + j),
                                     _mm256_loadu_pd(c_row + j)));
    _mm256_storeu_pd(c_row + j + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b_row + j + 4),
                                     _mm256_loadu_pd(c_row + j + 4)));
    _mm256_storeu_pd(c_row + j + 8,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b_row + j + 8),
                                     _mm256_loadu_pd(c_row + j + 8)));
    _mm256_storeu_pd(c_row + j + 12,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b_row + j + 12),
                                     _mm256_loadu_pd(c_row + j + 12)));
  }
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(c_row + j,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b_row + j),
                                     _mm256_loadu_pd(c_row + j)));
  }
  for (; j < n; ++j) c_row[j] += av * b_row[j];
}

}  // namespace

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
    for (int i = 0; i < m; ++i) {
      const double* a_row = A + size_t(i) * lda;
      double* c_row = C + size_t(i) * ldc;
      int p = 0;
      // Two A entries per pass share the loads of C[i,:].
      for (; p + 2 <= k; p += 2) {
        const __m256d va0 = _mm256_set1_pd(alpha * a_row[p]);
        const __m256d va1 = _mm256_set1_pd(alpha * a_row[p + 1]);
        const double* b0 = B + size_t(p) * ldb;
        const double* b1 = B + size_t(p + 1) * ldb;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
          __m256d c = _mm256_loadu_pd(c_row + j);
          c = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b0 + j), c);
          c = _mm256_fmadd_pd(va1, _mm256_loadu_pd(b1 + j), c);
          _mm256_storeu_pd(c_row + j, c);
        }
        for (; j < n; ++j)
          c_row[j] += alpha * a_row[p] * b0[j] + alpha * a_row[p + 1] * b1[j];
      }
      for (; p < k; ++p)
        fma_row(alpha * a_row[p], B + size_t(p) * ldb, c_row, n);
    }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < m; ++i) {
      const double* a_row = A + size_t(i) * lda;
      double* c_row = C + size_t(i) * ldc;
      for (int j = 0; j < n; ++j)
        c_row[j] += alpha * dot(a_row, B + size_t(j) * ldb, size_t(k));
    }
  } else {
    for (int p = 0; p < k; ++p) {
      const double* a_row = A + size_t(p) * lda;
      const double* b_row = B + size_t(p) * ldb;
      for (int i = 0; i < m; ++i)
        fma_row(alpha * a_row[i], b_row, C + size_t(i) * ldc, n);
    }
  }
}

}  // namespace lrfr::kernels::avx2

#endif  // LRFR_HAVE_AVX2_BUILD
