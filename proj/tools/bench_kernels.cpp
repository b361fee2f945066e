// Times the OpenMP kernels against the serial reference implementations.
#include <omp.h>

#include <cstdio>
#include <string>
#include <vector>

#include "fd/kernels.hpp"
#include "fd/rng.hpp"

using namespace fd;

namespace {

std::vector<double> randn(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal();
    return v;
}

template <typename F>
double time_ms(F&& fn, int iters) {
    fn();  // warm up
    const double t0 = omp_get_wtime();
    for (int i = 0; i < iters; ++i) fn();
    return (omp_get_wtime() - t0) * 1000.0 / iters;
}

void row(const std::string& name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name.c_str(), serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", kernels::effective_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    {
        const int m = 2048, k = 64, n = 64;
        auto a = randn(static_cast<int64_t>(m) * k, 1);
        auto b = randn(static_cast<int64_t>(k) * n, 2);
        std::vector<double> c(static_cast<size_t>(m) * n);
        row("gemm 2048x64x64",
            time_ms([&] { kernels::ref::gemm(c.data(), a.data(), b.data(), m, k, n); }, 50),
            time_ms([&] { kernels::gemm(c.data(), a.data(), b.data(), m, k, n); }, 50));
    }
    {
        const int m = 512, k = 256, n = 256;
        auto a = randn(static_cast<int64_t>(m) * k, 3);
        auto b = randn(static_cast<int64_t>(k) * n, 4);
        std::vector<double> c(static_cast<size_t>(m) * n);
        row("gemm 512x256x256",
            time_ms([&] { kernels::ref::gemm(c.data(), a.data(), b.data(), m, k, n); }, 20),
            time_ms([&] { kernels::gemm(c.data(), a.data(), b.data(), m, k, n); }, 20));
    }
    {
        const int b = 64, ci = 128, l = 32, co = 256, k = 3;
        auto x = randn(static_cast<int64_t>(b) * ci * l, 5);
        auto w = randn(static_cast<int64_t>(co) * ci * k, 6);
        auto bias = randn(co, 7);
        std::vector<double> y(static_cast<size_t>(b) * co * l);
        row("conv1d 64x128x32 -> 256",
            time_ms(
                [&] {
                    kernels::ref::conv1d(y.data(), x.data(), w.data(), bias.data(), b, ci, l, co,
                                         k, 1, 1, l);
                },
                10),
            time_ms(
                [&] {
                    kernels::conv1d(y.data(), x.data(), w.data(), bias.data(), b, ci, l, co, k, 1,
                                    1, l);
                },
                10));
    }
    {
        const int b = 64, c = 256, l = 64, groups = 8;
        auto x = randn(static_cast<int64_t>(b) * c * l, 8);
        auto gain = randn(c, 9);
        auto bias = randn(c, 10);
        std::vector<double> y(static_cast<size_t>(b) * c * l);
        std::vector<double> mean(static_cast<size_t>(b) * groups), inv(static_cast<size_t>(b) * groups);
        row("group_norm 64x256x64",
            time_ms(
                [&] {
                    kernels::ref::group_norm(y.data(), mean.data(), inv.data(), x.data(),
                                             gain.data(), bias.data(), b, c, l, groups, 1e-5);
                },
                20),
            time_ms(
                [&] {
                    kernels::group_norm(y.data(), mean.data(), inv.data(), x.data(), gain.data(),
                                        bias.data(), b, c, l, groups, 1e-5);
                },
                20));
    }
    {
        const int64_t n = 1 << 20;
        auto x = randn(n, 11);
        std::vector<double> y(static_cast<size_t>(n));
        row("mish 1M",
            time_ms([&] { kernels::ref::mish(y.data(), x.data(), n); }, 10),
            time_ms([&] { kernels::mish(y.data(), x.data(), n); }, 10));
    }
    return 0;
}
