// Timing comparison of the serial reference kernels against the OpenMP
// versions, plus a bitwise agreement check on every measured problem.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "sghf/kernels.hpp"
#include "sghf/rng.hpp"

using namespace sghf;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(size_t n, rng::Stream& rs) {
    std::vector<double> v(n);
    for (auto& x : v) x = rs.uniform(-1.0, 1.0);
    return v;
}

template <class Fn>
double time_ms(int reps, Fn&& fn) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

void row(const char* name, double serial_ms, double omp_ms, bool equal) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   %s\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms, equal ? "bitwise-equal" : "MISMATCH");
}

void bench_matmul(int64_t m, int64_t k, int64_t n, int reps, rng::Stream& rs) {
    auto a = random_vec(static_cast<size_t>(m * k), rs);
    auto b = random_vec(static_cast<size_t>(k * n), rs);
    std::vector<double> ys(static_cast<size_t>(m * n)), yp(ys);
    const double ts = time_ms(reps, [&] { kernels::matmul_serial(a.data(), b.data(), ys.data(), m, k, n); });
    const double tp = time_ms(reps, [&] { kernels::matmul_omp(a.data(), b.data(), yp.data(), m, k, n); });
    char name[64];
    std::snprintf(name, sizeof(name), "matmul %lldx%lldx%lld", static_cast<long long>(m),
                  static_cast<long long>(k), static_cast<long long>(n));
    row(name, ts, tp, ys == yp);
}

void bench_conv(bool three_d, int64_t batch, int64_t c, int64_t side, int64_t depth, int reps,
                rng::Stream& rs) {
    kernels::ConvDims d;
    d.batch = batch;
    d.cin = c;
    d.cout = 2 * c;
    const int sr = three_d ? 3 : 2;
    for (int i = 0; i < sr; ++i) {
        const int slot = 3 - sr + i;
        d.in[slot] = (three_d && i == 2) ? depth : side;
        d.k[slot] = 3;
        d.stride[slot] = 1;
        d.pad[slot] = 1;
    }
    d.compute_out();
    auto x = random_vec(static_cast<size_t>(d.x_numel()), rs);
    auto w = random_vec(static_cast<size_t>(d.w_numel()), rs);
    auto gy = random_vec(static_cast<size_t>(d.y_numel()), rs);

    std::vector<double> ys(static_cast<size_t>(d.y_numel())), yp(ys);
    double ts = time_ms(reps, [&] { kernels::conv_forward_serial(x.data(), w.data(), ys.data(), d); });
    double tp = time_ms(reps, [&] { kernels::conv_forward_omp(x.data(), w.data(), yp.data(), d); });
    char name[64];
    std::snprintf(name, sizeof(name), "conv%dd fwd b%lld c%lld s%lld", sr,
                  static_cast<long long>(batch), static_cast<long long>(c),
                  static_cast<long long>(side));
    row(name, ts, tp, ys == yp);

    std::vector<double> gxs(static_cast<size_t>(d.x_numel()), 0.0), gxp(gxs);
    ts = time_ms(reps, [&] {
        std::fill(gxs.begin(), gxs.end(), 0.0);
        kernels::conv_input_grad_serial(gy.data(), w.data(), gxs.data(), d);
    });
    tp = time_ms(reps, [&] {
        std::fill(gxp.begin(), gxp.end(), 0.0);
        kernels::conv_input_grad_omp(gy.data(), w.data(), gxp.data(), d);
    });
    std::snprintf(name, sizeof(name), "conv%dd dgrad", sr);
    row(name, ts, tp, gxs == gxp);

    std::vector<double> gws(static_cast<size_t>(d.w_numel()), 0.0), gwp(gws);
    ts = time_ms(reps, [&] {
        std::fill(gws.begin(), gws.end(), 0.0);
        kernels::conv_kernel_grad_serial(gy.data(), x.data(), gws.data(), d);
    });
    tp = time_ms(reps, [&] {
        std::fill(gwp.begin(), gwp.end(), 0.0);
        kernels::conv_kernel_grad_omp(gy.data(), x.data(), gwp.data(), d);
    });
    std::snprintf(name, sizeof(name), "conv%dd wgrad", sr);
    row(name, ts, tp, gws == gwp);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
    auto rs = rng::substream(1234, "bench");
    std::printf("threads available: %d (reps per measurement: %d)\n\n", kernels::max_threads(),
                reps);
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");
    bench_matmul(256, 256, 256, reps, rs);
    bench_matmul(64, 4096, 64, reps, rs);
    bench_matmul(1024, 64, 1024, reps, rs);
    bench_conv(false, 8, 8, 64, 0, reps, rs);
    bench_conv(true, 2, 8, 24, 12, reps, rs);
    return 0;
}
