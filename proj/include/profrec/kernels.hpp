#pragma once

// Dense double-precision kernels behind the numeric core (factorization,
// tower training, ranking). Every kernel has a scalar reference
// implementation and an AVX2 variant; the backend is picked once at runtime
// from CPU capabilities and can be overridden with the PROFREC_KERNELS
// environment variable (scalar|avx2|auto) or force_backend().
//
// Elementwise kernels (axpy, scale, relu, max, adam_step) produce
// bit-identical results on every backend; reductions (dot, sum) may differ
// by summation order and are compared with a tolerance in tests.

#include <cstddef>

namespace profrec::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend b);
void force_backend(Backend b);  // throws std::runtime_error if unsupported
const char* backend_name(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// x *= a
void scale(double a, double* x, std::size_t n);
// y[i] = max(y[i], x[i])
void max_inplace(double* y, const double* x, std::size_t n);
// x[i] = max(x[i], 0)
void relu_inplace(double* x, std::size_t n);

// One Adam update over a parameter tensor. bc1/bc2 are the bias
// corrections 1-beta1^t and 1-beta2^t for the current step.
void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);

// Scalar reference implementations, exposed for equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
void max_inplace(double* y, const double* x, std::size_t n);
void relu_inplace(double* x, std::size_t n);
void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
void max_inplace(double* y, const double* x, std::size_t n);
void relu_inplace(double* x, std::size_t n);
void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);
}  // namespace avx2
#endif

}  // namespace profrec::kernels
