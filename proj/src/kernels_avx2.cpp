// AVX2 kernel variants. This translation unit is the only one compiled with
// -mavx2; callers reach it through the runtime dispatch table, which checks
// CPU support first. Multiply and add stay separate (no FMA) so elementwise
// kernels round exactly like the scalar reference.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "profrec/kernels.hpp"

namespace profrec::kernels::avx2 {

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}
}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, vx));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale(double a, double* x, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void max_inplace(double* y, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_max_pd(vy, vx));
    }
    for (; i < n; ++i) y[i] = std::max(y[i], x[i]);
}

void relu_inplace(double* x, std::size_t n) {
    __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] = std::max(x[i], 0.0);
}

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n, double lr,
               double beta1, double beta2, double eps, double bc1, double bc2) {
    __m256d vb1 = _mm256_set1_pd(beta1);
    __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
    __m256d vb2 = _mm256_set1_pd(beta2);
    __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
    __m256d vlr = _mm256_set1_pd(lr);
    __m256d veps = _mm256_set1_pd(eps);
    __m256d vbc1 = _mm256_set1_pd(bc1);
    __m256d vbc2 = _mm256_set1_pd(bc2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vg = _mm256_loadu_pd(g + i);
        __m256d vm = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(vb1c, vg));
        vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv), _mm256_mul_pd(vb2c, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        __m256d mhat = _mm256_div_pd(vm, vbc1);
        __m256d vhat = _mm256_div_pd(vv, vbc2);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        __m256d vw = _mm256_loadu_pd(w + i);
        vw = _mm256_sub_pd(vw, _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom));
        _mm256_storeu_pd(w + i, vw);
    }
    if (i < n) scalar::adam_step(w + i, m + i, v + i, g + i, n - i, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace profrec::kernels::avx2

#endif  // x86_64
