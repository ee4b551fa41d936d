#pragma once

#include <cstdint>

// Dense compute kernels behind the tensor ops. Every kernel exists in a
// serial reference version and an OpenMP version; both produce bitwise
// identical results because each output element is accumulated in a fixed
// order by exactly one thread. The *_omp entry points fall back to the
// serial loop when built without OpenMP. The unsuffixed entry points
// dispatch on the global switch and a per-call work estimate.
namespace sghf::kernels {

bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

// y[m x n] = a[m x k] * b[k x n], all row-major.
void matmul_serial(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul_omp(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);
void matmul(const double* a, const double* b, double* y, int64_t m, int64_t k, int64_t n);

// ga[m x k] += gy[m x n] * b^T   (gradient of matmul w.r.t. a)
void matmul_grad_a_serial(const double* gy, const double* b, double* ga, int64_t m, int64_t k, int64_t n);
void matmul_grad_a_omp(const double* gy, const double* b, double* ga, int64_t m, int64_t k, int64_t n);
void matmul_grad_a(const double* gy, const double* b, double* ga, int64_t m, int64_t k, int64_t n);

// gb[k x n] += a^T * gy          (gradient of matmul w.r.t. b)
void matmul_grad_b_serial(const double* gy, const double* a, double* gb, int64_t m, int64_t k, int64_t n);
void matmul_grad_b_omp(const double* gy, const double* a, double* gb, int64_t m, int64_t k, int64_t n);
void matmul_grad_b(const double* gy, const double* a, double* gb, int64_t m, int64_t k, int64_t n);

// Cross-correlation over up to three spatial dims, unit dilation,
// symmetric zero padding. Two-dimensional problems use dim 0 as a dummy
// axis (extent 1, kernel 1, pad 0).
//   x: [batch, cin,  in0,  in1,  in2]
//   w: [cout,  cin,  k0,   k1,   k2]
//   y: [batch, cout, out0, out1, out2]
struct ConvDims {
    int64_t batch = 1;
    int64_t cin = 1;
    int64_t cout = 1;
    int64_t in[3] = {1, 1, 1};
    int64_t k[3] = {1, 1, 1};
    int64_t stride[3] = {1, 1, 1};
    int64_t pad[3] = {0, 0, 0};
    int64_t out[3] = {1, 1, 1};

    // Fills `out`; throws ShapeError if a kernel exceeds its padded input.
    void compute_out();

    int64_t in_spatial() const { return in[0] * in[1] * in[2]; }
    int64_t out_spatial() const { return out[0] * out[1] * out[2]; }
    int64_t kernel_spatial() const { return k[0] * k[1] * k[2]; }
    int64_t x_numel() const { return batch * cin * in_spatial(); }
    int64_t y_numel() const { return batch * cout * out_spatial(); }
    int64_t w_numel() const { return cout * cin * kernel_spatial(); }
};

void conv_forward_serial(const double* x, const double* w, double* y, const ConvDims& d);
void conv_forward_omp(const double* x, const double* w, double* y, const ConvDims& d);
void conv_forward(const double* x, const double* w, double* y, const ConvDims& d);

// gx += correlate-transpose(gy, w); gather form, one writer per element.
void conv_input_grad_serial(const double* gy, const double* w, double* gx, const ConvDims& d);
void conv_input_grad_omp(const double* gy, const double* w, double* gx, const ConvDims& d);
void conv_input_grad(const double* gy, const double* w, double* gx, const ConvDims& d);

// gw += sum over batch/output positions of gy * x.
void conv_kernel_grad_serial(const double* gy, const double* x, double* gw, const ConvDims& d);
void conv_kernel_grad_omp(const double* gy, const double* x, double* gw, const ConvDims& d);
void conv_kernel_grad(const double* gy, const double* x, double* gw, const ConvDims& d);

}  // namespace sghf::kernels
