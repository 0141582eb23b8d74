#include <atomic>
#include <cstdlib>
#include <string>

#include "lrfr/common.hpp"
#include "lrfr/kernels.hpp"

namespace lrfr::kernels {

bool avx2_available() {
#ifdef LRFR_HAVE_AVX2_BUILD
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend detect() {
  const char* env = std::getenv("LRFR_SIMD");
  if (env != nullptr) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      check(avx2_available(), "LRFR_SIMD=avx2 but AVX2/FMA not available");
      return Backend::avx2;
    }
    check(v == "auto", "LRFR_SIMD must be scalar, avx2 or auto (got '", v,
          "')");
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect()};
  return slot;
}

}  // namespace

Backend active_backend() { return backend_slot().load(); }

void set_backend(Backend b) {
  if (b == Backend::avx2) check(avx2_available(), "AVX2/FMA not available");
  backend_slot().store(b);
}

std::string backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

#ifdef LRFR_HAVE_AVX2_BUILD
#define LRFR_DISPATCH(fn, ...)                       \
  if (active_backend() == Backend::avx2)             \
    return avx2::fn(__VA_ARGS__);                    \
  return scalar::fn(__VA_ARGS__)
#else
#define LRFR_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void add(const double* a, const double* b, double* out, size_t n) {
  LRFR_DISPATCH(add, a, b, out, n);
}
void sub(const double* a, const double* b, double* out, size_t n) {
  LRFR_DISPATCH(sub, a, b, out, n);
}
void mul(const double* a, const double* b, double* out, size_t n) {
  LRFR_DISPATCH(mul, a, b, out, n);
}
void scale(const double* a, double s, double* out, size_t n) {
  LRFR_DISPATCH(scale, a, s, out, n);
}
void axpy(double alpha, const double* x, double* y, size_t n) {
  LRFR_DISPATCH(axpy, alpha, x, y, n);
}
double dot(const double* a, const double* b, size_t n) {
  LRFR_DISPATCH(dot, a, b, n);
}
double sum(const double* a, size_t n) { LRFR_DISPATCH(sum, a, n); }

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc) {
  LRFR_DISPATCH(gemm, trans_a, trans_b, m, n, k, alpha, A, lda, B, ldb, beta,
                C, ldc);
}

}  // namespace lrfr::kernels
