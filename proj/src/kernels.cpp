#include "sghf/kernels.hpp"

#include <atomic>

#include "sghf/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sghf::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds the OpenMP fork/join overhead dominates.
constexpr int64_t kParallelWorkThreshold = 1 << 15;

bool use_omp(int64_t work) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && work >= kParallelWorkThreshold &&
           omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------- matmul

void matmul_serial(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* yrow = y + i * n;
        for (int64_t j = 0; j < n; ++j) yrow[j] = 0.0;
        for (int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void matmul_omp(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* yrow = y + i * n;
        for (int64_t j = 0; j < n; ++j) yrow[j] = 0.0;
        for (int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
#else
    matmul_serial(a, b, y, m, k, n);
#endif
}

void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n) {
    if (use_omp(m * k * n)) {
        matmul_omp(a, b, y, m, k, n);
    } else {
        matmul_serial(a, b, y, m, k, n);
    }
}

void matmul_grad_a_serial(const double* gy, const double* b, double* ga, int64_t m, int64_t k,
                          int64_t n) {
    // ga[i,l] += sum_j gy[i,j] * b[l,j]
    for (int64_t i = 0; i < m; ++i) {
        const double* gyrow = gy + i * n;
        double* garow = ga + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const double* brow = b + l * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
            garow[l] += acc;
        }
    }
}

void matmul_grad_a_omp(const double* gy, const double* b, double* ga, int64_t m, int64_t k,
                       int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* gyrow = gy + i * n;
        double* garow = ga + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const double* brow = b + l * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
            garow[l] += acc;
        }
    }
#else
    matmul_grad_a_serial(gy, b, ga, m, k, n);
#endif
}

void matmul_grad_a(const double* gy, const double* b, double* ga, int64_t m, int64_t k, int64_t n) {
    if (use_omp(m * k * n)) {
        matmul_grad_a_omp(gy, b, ga, m, k, n);
    } else {
        matmul_grad_a_serial(gy, b, ga, m, k, n);
    }
}

void matmul_grad_b_serial(const double* gy, const double* a, double* gb, int64_t m, int64_t k,
                          int64_t n) {
    // gb[l,j] += sum_i a[i,l] * gy[i,j]
    for (int64_t l = 0; l < k; ++l) {
        double* gbrow = gb + l * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + l];
            const double* gyrow = gy + i * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * gyrow[j];
        }
    }
}

void matmul_grad_b_omp(const double* gy, const double* a, double* gb, int64_t m, int64_t k,
                       int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int64_t l = 0; l < k; ++l) {
        double* gbrow = gb + l * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = a[i * k + l];
            const double* gyrow = gy + i * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * gyrow[j];
        }
    }
#else
    matmul_grad_b_serial(gy, a, gb, m, k, n);
#endif
}

void matmul_grad_b(const double* gy, const double* a, double* gb, int64_t m, int64_t k, int64_t n) {
    if (use_omp(m * k * n)) {
        matmul_grad_b_omp(gy, a, gb, m, k, n);
    } else {
        matmul_grad_b_serial(gy, a, gb, m, k, n);
    }
}

// ------------------------------------------------------------------ conv

void ConvDims::compute_out() {
    for (int d = 0; d < 3; ++d) {
        if (k[d] > in[d] + 2 * pad[d]) {
            throw ShapeError("conv: kernel larger than padded input");
        }
        if (stride[d] < 1) throw ShapeError("conv: stride must be >= 1");
        out[d] = (in[d] + 2 * pad[d] - k[d]) / stride[d] + 1;
    }
}

namespace {

// One output row (fixed batch, cout, o0): iterate o1/o2 and accumulate the
// correlation sum in a fixed order. Shared by the serial and OMP drivers.
inline void conv_forward_row(const double* x, const double* w, double* y, const ConvDims& d,
                             int64_t b, int64_t co, int64_t o0) {
    const int64_t in12 = d.in[1] * d.in[2];
    const int64_t k12 = d.k[1] * d.k[2];
    const double* xb = x + b * d.cin * d.in_spatial();
    const double* wc = w + co * d.cin * d.kernel_spatial();
    double* yrow = y + ((b * d.cout + co) * d.out[0] + o0) * d.out[1] * d.out[2];
    for (int64_t o1 = 0; o1 < d.out[1]; ++o1) {
        for (int64_t o2 = 0; o2 < d.out[2]; ++o2) {
            double acc = 0.0;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xc = xb + ci * d.in_spatial();
                const double* wk = wc + ci * d.kernel_spatial();
                for (int64_t k0 = 0; k0 < d.k[0]; ++k0) {
                    const int64_t i0 = o0 * d.stride[0] - d.pad[0] + k0;
                    if (i0 < 0 || i0 >= d.in[0]) continue;
                    for (int64_t k1 = 0; k1 < d.k[1]; ++k1) {
                        const int64_t i1 = o1 * d.stride[1] - d.pad[1] + k1;
                        if (i1 < 0 || i1 >= d.in[1]) continue;
                        const double* xrow = xc + i0 * in12 + i1 * d.in[2];
                        const double* wrow = wk + k0 * k12 + k1 * d.k[2];
                        for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
                            const int64_t i2 = o2 * d.stride[2] - d.pad[2] + k2;
                            if (i2 < 0 || i2 >= d.in[2]) continue;
                            acc += xrow[i2] * wrow[k2];
                        }
                    }
                }
            }
            yrow[o1 * d.out[2] + o2] = acc;
        }
    }
}

inline void conv_input_grad_row(const double* gy, const double* w, double* gx, const ConvDims& d,
                                int64_t b, int64_t ci, int64_t i0) {
    const int64_t out12 = d.out[1] * d.out[2];
    const int64_t k12 = d.k[1] * d.k[2];
    double* gxrow = gx + ((b * d.cin + ci) * d.in[0] + i0) * d.in[1] * d.in[2];
    for (int64_t i1 = 0; i1 < d.in[1]; ++i1) {
        for (int64_t i2 = 0; i2 < d.in[2]; ++i2) {
            double acc = 0.0;
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* gyc = gy + (b * d.cout + co) * d.out_spatial();
                const double* wk = w + (co * d.cin + ci) * d.kernel_spatial();
                for (int64_t k0 = 0; k0 < d.k[0]; ++k0) {
                    const int64_t n0 = i0 + d.pad[0] - k0;
                    if (n0 < 0 || n0 % d.stride[0] != 0) continue;
                    const int64_t o0 = n0 / d.stride[0];
                    if (o0 >= d.out[0]) continue;
                    for (int64_t k1 = 0; k1 < d.k[1]; ++k1) {
                        const int64_t n1 = i1 + d.pad[1] - k1;
                        if (n1 < 0 || n1 % d.stride[1] != 0) continue;
                        const int64_t o1 = n1 / d.stride[1];
                        if (o1 >= d.out[1]) continue;
                        for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
                            const int64_t n2 = i2 + d.pad[2] - k2;
                            if (n2 < 0 || n2 % d.stride[2] != 0) continue;
                            const int64_t o2 = n2 / d.stride[2];
                            if (o2 >= d.out[2]) continue;
                            acc += gyc[o0 * out12 + o1 * d.out[2] + o2] *
                                   wk[k0 * k12 + k1 * d.k[2] + k2];
                        }
                    }
                }
            }
            gxrow[i1 * d.in[2] + i2] += acc;
        }
    }
}

inline void conv_kernel_grad_slab(const double* gy, const double* x, double* gw, const ConvDims& d,
                                  int64_t co, int64_t ci, int64_t k0) {
    const int64_t in12 = d.in[1] * d.in[2];
    const int64_t out12 = d.out[1] * d.out[2];
    double* gwrow = gw + ((co * d.cin + ci) * d.k[0] + k0) * d.k[1] * d.k[2];
    for (int64_t k1 = 0; k1 < d.k[1]; ++k1) {
        for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
            double acc = 0.0;
            for (int64_t b = 0; b < d.batch; ++b) {
                const double* gyc = gy + (b * d.cout + co) * d.out_spatial();
                const double* xc = x + (b * d.cin + ci) * d.in_spatial();
                for (int64_t o0 = 0; o0 < d.out[0]; ++o0) {
                    const int64_t i0 = o0 * d.stride[0] - d.pad[0] + k0;
                    if (i0 < 0 || i0 >= d.in[0]) continue;
                    for (int64_t o1 = 0; o1 < d.out[1]; ++o1) {
                        const int64_t i1 = o1 * d.stride[1] - d.pad[1] + k1;
                        if (i1 < 0 || i1 >= d.in[1]) continue;
                        const double* gyrow = gyc + o0 * out12 + o1 * d.out[2];
                        const double* xrow = xc + i0 * in12 + i1 * d.in[2];
                        for (int64_t o2 = 0; o2 < d.out[2]; ++o2) {
                            const int64_t i2 = o2 * d.stride[2] - d.pad[2] + k2;
                            if (i2 < 0 || i2 >= d.in[2]) continue;
                            acc += gyrow[o2] * xrow[i2];
                        }
                    }
                }
            }
            gwrow[k1 * d.k[2] + k2] += acc;
        }
    }
}

inline int64_t conv_work(const ConvDims& d) {
    return d.batch * d.cout * d.cin * d.out_spatial() * d.kernel_spatial();
}

}  // namespace

void conv_forward_serial(const double* x, const double* w, double* y, const ConvDims& d) {
    for (int64_t idx = 0; idx < d.batch * d.cout * d.out[0]; ++idx) {
        const int64_t o0 = idx % d.out[0];
        const int64_t co = (idx / d.out[0]) % d.cout;
        const int64_t b = idx / (d.out[0] * d.cout);
        conv_forward_row(x, w, y, d, b, co, o0);
    }
}

void conv_forward_omp(const double* x, const double* w, double* y, const ConvDims& d) {
#ifdef _OPENMP
    const int64_t total = d.batch * d.cout * d.out[0];
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t o0 = idx % d.out[0];
        const int64_t co = (idx / d.out[0]) % d.cout;
        const int64_t b = idx / (d.out[0] * d.cout);
        conv_forward_row(x, w, y, d, b, co, o0);
    }
#else
    conv_forward_serial(x, w, y, d);
#endif
}

void conv_forward(const double* x, const double* w, double* y, const ConvDims& d) {
    if (use_omp(conv_work(d))) {
        conv_forward_omp(x, w, y, d);
    } else {
        conv_forward_serial(x, w, y, d);
    }
}

void conv_input_grad_serial(const double* gy, const double* w, double* gx, const ConvDims& d) {
    for (int64_t idx = 0; idx < d.batch * d.cin * d.in[0]; ++idx) {
        const int64_t i0 = idx % d.in[0];
        const int64_t ci = (idx / d.in[0]) % d.cin;
        const int64_t b = idx / (d.in[0] * d.cin);
        conv_input_grad_row(gy, w, gx, d, b, ci, i0);
    }
}

void conv_input_grad_omp(const double* gy, const double* w, double* gx, const ConvDims& d) {
#ifdef _OPENMP
    const int64_t total = d.batch * d.cin * d.in[0];
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t i0 = idx % d.in[0];
        const int64_t ci = (idx / d.in[0]) % d.cin;
        const int64_t b = idx / (d.in[0] * d.cin);
        conv_input_grad_row(gy, w, gx, d, b, ci, i0);
    }
#else
    conv_input_grad_serial(gy, w, gx, d);
#endif
}

void conv_input_grad(const double* gy, const double* w, double* gx, const ConvDims& d) {
    if (use_omp(conv_work(d))) {
        conv_input_grad_omp(gy, w, gx, d);
    } else {
        conv_input_grad_serial(gy, w, gx, d);
    }
}

void conv_kernel_grad_serial(const double* gy, const double* x, double* gw, const ConvDims& d) {
    for (int64_t idx = 0; idx < d.cout * d.cin * d.k[0]; ++idx) {
        const int64_t k0 = idx % d.k[0];
        const int64_t ci = (idx / d.k[0]) % d.cin;
        const int64_t co = idx / (d.k[0] * d.cin);
        conv_kernel_grad_slab(gy, x, gw, d, co, ci, k0);
    }
}

void conv_kernel_grad_omp(const double* gy, const double* x, double* gw, const ConvDims& d) {
#ifdef _OPENMP
    const int64_t total = d.cout * d.cin * d.k[0];
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t k0 = idx % d.k[0];
        const int64_t ci = (idx / d.k[0]) % d.cin;
        const int64_t co = idx / (d.k[0] * d.cin);
        conv_kernel_grad_slab(gy, x, gw, d, co, ci, k0);
    }
#else
    conv_kernel_grad_serial(gy, x, gw, d);
#endif
}

void conv_kernel_grad(const double* gy, const double* x, double* gw, const ConvDims& d) {
    if (use_omp(conv_work(d))) {
        conv_kernel_grad_omp(gy, x, gw, d);
    } else {
        conv_kernel_grad_serial(gy, x, gw, d);
    }
}

}  // namespace sghf::kernels
