#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops used by the tensor ops, the conv/linear layers
// (via im2col + gemm) and the loss reductions. Every kernel exists as a
// scalar reference and, on x86-64, an AVX2+FMA variant; the backend is
// resolved once at startup from CPU detection, overridable with
// LRFR_SIMD=scalar|avx2|auto (tests use the override to cross-check the
// two implementations on identical inputs).
//
// A given backend is deterministic: summation order is fixed per variant,
// so identical inputs give bitwise-identical outputs on the same path.
// Scalar and SIMD variants differ only by floating-point reassociation.

namespace lrfr::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
void set_backend(Backend b);  // overrides detection (tests)
bool avx2_available();
std::string backend_name(Backend b);

// Elementwise, all length n, out may alias a.
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* a, double s, double* out, size_t n);

// y += alpha * x
void axpy(double alpha, const double* x, double* y, size_t n);

double dot(const double* a, const double* b, size_t n);
double sum(const double* a, size_t n);

// Row-major C(m x n) = alpha * op(A) * op(B) + beta * C.
// Supported op combinations: NN, NT, TN.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc);

namespace scalar {
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* a, double s, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
double dot(const double* a, const double* b, size_t n);
double sum(const double* a, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define LRFR_HAVE_AVX2_BUILD 1
namespace avx2 {
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* a, double s, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
double dot(const double* a, const double* b, size_t n);
double sum(const double* a, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc);
}  // namespace avx2
#endif

}  // namespace lrfr::kernels
