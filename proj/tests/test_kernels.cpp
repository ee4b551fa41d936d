#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "sghf/kernels.hpp"
#include "sghf/rng.hpp"

using namespace sghf;

namespace {

std::vector<double> random_vec(size_t n, rng::Stream& rs) {
    std::vector<double> v(n);
    for (auto& x : v) x = rs.uniform(-1.0, 1.0);
    return v;
}

kernels::ConvDims make_dims(int64_t batch, int64_t cin, int64_t cout, std::vector<int64_t> in,
                            std::vector<int64_t> k, int64_t stride, int64_t pad) {
    kernels::ConvDims d;
    d.batch = batch;
    d.cin = cin;
    d.cout = cout;
    const int sr = static_cast<int>(in.size());
    for (int i = 0; i < sr; ++i) {
        const int slot = 3 - sr + i;
        d.in[slot] = in[static_cast<size_t>(i)];
        d.k[slot] = k[static_cast<size_t>(i)];
        d.stride[slot] = stride;
        d.pad[slot] = pad;
    }
    d.compute_out();
    return d;
}

}  // namespace

TEST_CASE("omp matmul matches serial bitwise across shapes") {
    auto rs = rng::substream(7, "kernels");
    for (int it = 0; it < 20; ++it) {
        const int64_t m = 1 + static_cast<int64_t>(rs.below(40));
        const int64_t k = 1 + static_cast<int64_t>(rs.below(40));
        const int64_t n = 1 + static_cast<int64_t>(rs.below(40));
        auto a = random_vec(static_cast<size_t>(m * k), rs);
        auto b = random_vec(static_cast<size_t>(k * n), rs);
        std::vector<double> ys(static_cast<size_t>(m * n)), yp(static_cast<size_t>(m * n));
        kernels::matmul_serial(a.data(), b.data(), ys.data(), m, k, n);
        kernels::matmul_omp(a.data(), b.data(), yp.data(), m, k, n);
        CHECK(ys == yp);

        std::vector<double> gy = random_vec(static_cast<size_t>(m * n), rs);
        std::vector<double> gas(static_cast<size_t>(m * k), 0.5), gap(gas);
        kernels::matmul_grad_a_serial(gy.data(), b.data(), gas.data(), m, k, n);
        kernels::matmul_grad_a_omp(gy.data(), b.data(), gap.data(), m, k, n);
        CHECK(gas == gap);

        std::vector<double> gbs(static_cast<size_t>(k * n), -0.25), gbp(gbs);
        kernels::matmul_grad_b_serial(gy.data(), a.data(), gbs.data(), m, k, n);
        kernels::matmul_grad_b_omp(gy.data(), a.data(), gbp.data(), m, k, n);
        CHECK(gbs == gbp);
    }
}

TEST_CASE("omp conv matches serial bitwise, 2-D and 3-D, strides and pads") {
    auto rs = rng::substream(11, "kernels-conv");
    for (int it = 0; it < 12; ++it) {
        const bool three_d = it % 2 == 0;
        const int64_t batch = 1 + static_cast<int64_t>(rs.below(3));
        const int64_t cin = 1 + static_cast<int64_t>(rs.below(3));
        const int64_t cout = 1 + static_cast<int64_t>(rs.below(4));
        const int64_t ks = 1 + static_cast<int64_t>(rs.below(3));
        const int64_t stride = 1 + static_cast<int64_t>(rs.below(2));
        const int64_t pad = static_cast<int64_t>(rs.below(2));
        std::vector<int64_t> in, k;
        for (int i = 0; i < (three_d ? 3 : 2); ++i) {
            in.push_back(ks + static_cast<int64_t>(rs.below(8)));
            k.push_back(ks);
        }
        auto d = make_dims(batch, cin, cout, in, k, stride, pad);

        auto x = random_vec(static_cast<size_t>(d.x_numel()), rs);
        auto w = random_vec(static_cast<size_t>(d.w_numel()), rs);
        std::vector<double> ys(static_cast<size_t>(d.y_numel())), yp(ys);
        kernels::conv_forward_serial(x.data(), w.data(), ys.data(), d);
        kernels::conv_forward_omp(x.data(), w.data(), yp.data(), d);
        CHECK(ys == yp);

        auto gy = random_vec(static_cast<size_t>(d.y_numel()), rs);
        std::vector<double> gxs(static_cast<size_t>(d.x_numel()), 0.125), gxp(gxs);
        kernels::conv_input_grad_serial(gy.data(), w.data(), gxs.data(), d);
        kernels::conv_input_grad_omp(gy.data(), w.data(), gxp.data(), d);
        CHECK(gxs == gxp);

        std::vector<double> gws(static_cast<size_t>(d.w_numel()), -1.0), gwp(gws);
        kernels::conv_kernel_grad_serial(gy.data(), x.data(), gws.data(), d);
        kernels::conv_kernel_grad_omp(gy.data(), x.data(), gwp.data(), d);
        CHECK(gws == gwp);
    }
}

TEST_CASE("dispatch honors the parallel switch") {
    CHECK(kernels::parallel_enabled());
    kernels::set_parallel(false);
    CHECK_FALSE(kernels::parallel_enabled());
    kernels::set_parallel(true);
    CHECK(kernels::max_threads() >= 1);
}
