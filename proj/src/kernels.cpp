#include "profrec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>

namespace profrec::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void max_inplace(double* y, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::max(y[i], x[i]);
}

void relu_inplace(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::max(x[i], 0.0);
}

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace scalar

namespace {

struct Dispatch {
    Backend backend;
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    void (*max_inplace)(double*, const double*, std::size_t);
    void (*relu_inplace)(double*, std::size_t);
    void (*adam_step)(double*, double*, double*, const double*, std::size_t, double, double,
                      double, double, double, double);
};

constexpr Dispatch kScalar = {Backend::scalar,      scalar::dot,          scalar::sum,
                              scalar::axpy,         scalar::scale,        scalar::max_inplace,
                              scalar::relu_inplace, scalar::adam_step};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Dispatch kAvx2 = {Backend::avx2,      avx2::dot,          avx2::sum,
                            avx2::axpy,         avx2::scale,        avx2::max_inplace,
                            avx2::relu_inplace, avx2::adam_step};
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

std::mutex g_mutex;
const Dispatch* g_table = nullptr;

const Dispatch* pick_default() {
    const char* env = std::getenv("PROFREC_KERNELS");
    std::string want = env ? env : "auto";
    if (want == "scalar") return &kScalar;
#if defined(__x86_64__) || defined(_M_X64)
    if (want == "avx2") {
        if (!cpu_has_avx2()) throw std::runtime_error("PROFREC_KERNELS=avx2 but CPU lacks AVX2");
        return &kAvx2;
    }
    if (cpu_has_avx2()) return &kAvx2;
#else
    if (want == "avx2") throw std::runtime_error("PROFREC_KERNELS=avx2 unsupported on this arch");
#endif
    return &kScalar;
}

const Dispatch* table() {
    const Dispatch* t = g_table;
    if (t) return t;
    std::lock_guard<std::mutex> lock(g_mutex);
    if (!g_table) g_table = pick_default();
    return g_table;
}

}  // namespace

Backend active_backend() { return table()->backend; }

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2();
}

void force_backend(Backend b) {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (b == Backend::scalar) {
        g_table = &kScalar;
        return;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2 && cpu_has_avx2()) {
        g_table = &kAvx2;
        return;
    }
#endif
    throw std::runtime_error("requested kernel backend not supported on this CPU");
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

double dot(const double* a, const double* b, std::size_t n) { return table()->dot(a, b, n); }
double sum(const double* x, std::size_t n) { return table()->sum(x, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { table()->axpy(a, x, y, n); }
void scale(double a, double* x, std::size_t n) { table()->scale(a, x, n); }
void max_inplace(double* y, const double* x, std::size_t n) { table()->max_inplace(y, x, n); }
void relu_inplace(double* x, std::size_t n) { table()->relu_inplace(x, n); }
void adam_step(double* w, double* m, double* v, const double* g, std::size_t n, double lr,
               double beta1, double beta2, double eps, double bc1, double bc2) {
    table()->adam_step(w, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace profrec::kernels
