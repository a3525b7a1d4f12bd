// Micro-benchmark for the numeric kernels: times each backend on the hot
// operations so dispatch gains are visible on the target machine.

#include <chrono>
#include <cstdio>
#include <vector>

#include <CLI11.hpp>

#include "profrec/kernels.hpp"
#include "profrec/rng.hpp"

using namespace profrec;

namespace {

double now() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Op {
    const char* name;
    double flops_per_elem;
    void (*run)(kernels::Backend, std::vector<double>&, std::vector<double>&,
                std::vector<double>&, std::vector<double>&);
};

template <typename F>
double time_loop(int reps, F&& f) {
    f();  // warm up
    double t0 = now();
    for (int r = 0; r < reps; ++r) f();
    return (now() - t0) / reps;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel micro-benchmark"};
    std::size_t n = 1 << 20;
    int reps = 50;
    app.add_option("--n", n, "vector length");
    app.add_option("--reps", reps, "repetitions per measurement");
    CLI11_PARSE(app, argc, argv);

    Rng rng(1);
    std::vector<double> a(n), b(n), m(n, 0.0), v(n, 0.0);
    for (auto& x : a) x = rng.uniform_real(-1, 1);
    for (auto& x : b) x = rng.uniform_real(-1, 1);

    std::vector<kernels::Backend> backends = {kernels::Backend::scalar};
    if (kernels::backend_supported(kernels::Backend::avx2))
        backends.push_back(kernels::Backend::avx2);

    std::printf("n=%zu reps=%d (times per call)\n", n, reps);
    std::printf("%-10s %12s %12s %10s\n", "op", "backend", "seconds", "GFLOP/s");
    volatile double sink = 0.0;
    for (auto backend : backends) {
        kernels::force_backend(backend);
        double t_dot = time_loop(reps, [&] { sink = kernels::dot(a.data(), b.data(), n); });
        std::printf("%-10s %12s %12.3e %10.2f\n", "dot", kernels::backend_name(backend), t_dot,
                    2.0 * n / t_dot / 1e9);
        double t_axpy = time_loop(reps, [&] { kernels::axpy(1.0000001, a.data(), b.data(), n); });
        std::printf("%-10s %12s %12.3e %10.2f\n", "axpy", kernels::backend_name(backend),
                    t_axpy, 2.0 * n / t_axpy / 1e9);
        double t_max = time_loop(reps, [&] { kernels::max_inplace(b.data(), a.data(), n); });
        std::printf("%-10s %12s %12.3e %10.2f\n", "max", kernels::backend_name(backend), t_max,
                    1.0 * n / t_max / 1e9);
        double t_adam = time_loop(reps, [&] {
            kernels::adam_step(b.data(), m.data(), v.data(), a.data(), n, 1e-3, 0.9, 0.999,
                               1e-8, 0.1, 0.01);
        });
        std::printf("%-10s %12s %12.3e %10.2f\n", "adam", kernels::backend_name(backend),
                    t_adam, 11.0 * n / t_adam / 1e9);
    }
    (void)sink;
    return 0;
}
