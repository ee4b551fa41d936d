#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sghf/tensor.hpp"
#include "test_support.hpp"

using namespace sghf;
using sghf::testing::fd_max_rel_error;
using sghf::testing::random_tensor;
using sghf::testing::random_tensor_away_from_zero;

namespace {

// Independent triple-loop product used as the matmul oracle.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t l = 0; l < k; ++l)
                y[static_cast<size_t>(i * n + j)] += a.at({i, l}) * b.at({l, j});
    return y;
}

// Nested-loop cross-correlation oracle for unbatched 3-D inputs.
std::vector<double> naive_conv3d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    const int64_t cin = x.dim(0), d0 = x.dim(1), d1 = x.dim(2), d2 = x.dim(3);
    const int64_t cout = w.dim(0), k0 = w.dim(2), k1 = w.dim(3), k2 = w.dim(4);
    const int64_t o0 = (d0 + 2 * pad - k0) / stride + 1;
    const int64_t o1 = (d1 + 2 * pad - k1) / stride + 1;
    const int64_t o2 = (d2 + 2 * pad - k2) / stride + 1;
    std::vector<double> y(static_cast<size_t>(cout * o0 * o1 * o2), 0.0);
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t a = 0; a < o0; ++a)
            for (int64_t b = 0; b < o1; ++b)
                for (int64_t c = 0; c < o2; ++c) {
                    double acc = 0.0;
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t ka = 0; ka < k0; ++ka)
                            for (int64_t kb = 0; kb < k1; ++kb)
                                for (int64_t kc = 0; kc < k2; ++kc) {
                                    const int64_t ia = a * stride - pad + ka;
                                    const int64_t ib = b * stride - pad + kb;
                                    const int64_t ic = c * stride - pad + kc;
                                    if (ia < 0 || ia >= d0 || ib < 0 || ib >= d1 || ic < 0 ||
                                        ic >= d2)
                                        continue;
                                    acc += x.at({ci, ia, ib, ic}) * w.at({co, ci, ka, kb, kc});
                                }
                    y[static_cast<size_t>(((co * o0 + a) * o1 + b) * o2 + c)] = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("matmul: identity and hand-checked products") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {5, 6, 7, 8});
    Tensor r = matmul(eye, m);
    CHECK(r.vec() == std::vector<double>{5, 6, 7, 8});

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor p = matmul(a, m);
    CHECK(p.vec() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul matches the triple-loop oracle within 1e-12") {
    auto rs = rng::substream(3, "matmul-oracle");
    for (int it = 0; it < 10; ++it) {
        Tensor a = random_tensor({7, 5}, rs);
        Tensor b = random_tensor({5, 3}, rs);
        Tensor y = matmul(a, b);
        auto ref = naive_matmul(a, b);
        for (int64_t i = 0; i < y.numel(); ++i) {
            CHECK(std::fabs(y.data()[i] - ref[static_cast<size_t>(i)]) <= 1e-12);
        }
    }
}

TEST_CASE("matmul rejects mismatched inner dims") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 2})), ShapeError);
}

TEST_CASE("conv: unit 1x1x1 kernel reproduces the input") {
    auto rs = rng::substream(4, "conv-id");
    Tensor x = random_tensor({1, 3, 4, 5}, rs);
    Tensor w({1, 1, 1, 1, 1}, {1.0});
    Tensor y = conv(x, w, 1, 0);
    CHECK(y.shape() == x.shape());
    CHECK(y.vec() == x.vec());

    Tensor zero_w = Tensor::zeros({2, 1, 3, 3, 3});
    Tensor z = conv(x, zero_w, 1, 1);
    for (double v : z.vec()) CHECK(v == 0.0);
}

TEST_CASE("conv matches the nested-loop oracle within 1e-12") {
    auto rs = rng::substream(5, "conv-oracle");
    Tensor x = random_tensor({1, 4, 4, 4}, rs);
    Tensor w = random_tensor({2, 1, 3, 3, 3}, rs);
    for (int64_t pad = 0; pad <= 1; ++pad) {
        for (int64_t stride = 1; stride <= 2; ++stride) {
            Tensor y = conv(x, w, stride, pad);
            auto ref = naive_conv3d(x, w, stride, pad);
            REQUIRE(static_cast<size_t>(y.numel()) == ref.size());
            for (int64_t i = 0; i < y.numel(); ++i) {
                CHECK(std::fabs(y.data()[i] - ref[static_cast<size_t>(i)]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("conv rejects rank mismatch and oversized kernels") {
    CHECK_THROWS_AS(conv(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3, 3})), ShapeError);
    CHECK_THROWS_AS(conv(Tensor({1, 2, 2, 2}), Tensor({1, 1, 5, 5, 5}), 1, 1), ShapeError);
}

TEST_CASE("softmax closed forms") {
    Tensor c = Tensor({3}, {0.7, 0.7, 0.7});
    Tensor s = softmax(c, 0);
    for (int64_t i = 0; i < 3; ++i) CHECK(s.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor one = softmax(Tensor::scalar(4.2), 0);
    CHECK(one.value() == doctest::Approx(1.0));

    Tensor two = softmax(Tensor({2}, {0.0, std::log(2.0)}), 0);
    CHECK(two.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(two.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and shift invariance holds at 1e-12") {
    auto rs = rng::substream(6, "softmax");
    for (int it = 0; it < 30; ++it) {
        Tensor x = random_tensor({4, 6}, rs, -5.0, 5.0);
        Tensor y = softmax(x, 1);
        for (int64_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int64_t j = 0; j < 6; ++j) sum += y.at({r, j});
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
        const double shift = rs.uniform(-10.0, 10.0);
        Tensor y2 = softmax(add_scalar(x, shift), 1);
        for (int64_t i = 0; i < y.numel(); ++i) {
            CHECK(std::fabs(y.data()[i] - y2.data()[i]) <= 1e-12);
        }
    }
}

TEST_CASE("concat values, shape contract and gradient routing") {
    Tensor a = Tensor::from_vector({1, 2});
    Tensor b = Tensor::from_vector({3});
    Tensor c = concat(a, b, 0);
    CHECK(c.vec() == std::vector<double>{1, 2, 3});

    Tensor f1 = Tensor::zeros({5});
    Tensor f2 = Tensor::zeros({5});
    CHECK(concat(f1, f2, 0).dim(0) == 10);

    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor loss = sum(concat(a, b, 0));
    loss.backward();
    CHECK(a.grad() == std::vector<double>{1, 1});
    CHECK(b.grad() == std::vector<double>{1});

    CHECK_THROWS_AS(concat(Tensor({2, 3}), Tensor({3, 4}), 0), ShapeError);
}

TEST_CASE("backward closed forms") {
    Tensor x = Tensor::from_vector({1, 2, 3});
    x.set_requires_grad(true);
    sum(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    Tensor w = Tensor::from_vector({1, 2});
    w.set_requires_grad(true);
    sum(mul(w, w)).backward();
    CHECK(w.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward requires a scalar") {
    Tensor x = Tensor::zeros({2, 2});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(add(x, x).backward(), ShapeError);
}

TEST_CASE("composite graph gradients match central differences") {
    auto rs = rng::substream(8, "fd-composite");
    for (int it = 0; it < 10; ++it) {
        Tensor a = random_tensor_away_from_zero({3, 4}, rs);
        Tensor b = random_tensor({4, 3}, rs);
        Tensor c = random_tensor({3, 3}, rs);
        auto forward = [&]() {
            Tensor m = matmul(a, b);
            Tensor h = relu(add(m, c));
            Tensor s = softmax(h, 1);
            return mean(mul(s, sigmoid(m)));
        };
        CHECK(fd_max_rel_error(forward, {a, b, c}) < 1e-4);
    }
}

TEST_CASE("per-op gradients match central differences") {
    auto rs = rng::substream(9, "fd-ops");
    for (int it = 0; it < 5; ++it) {
        Tensor x = random_tensor_away_from_zero({2, 3}, rs);
        CHECK(fd_max_rel_error([&] { return sum(relu(x)); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return sum(sigmoid(x)); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return sum(softmax(x, 1)); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return mean(mul(x, x)); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return sum(transpose(x)); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return sum(reshape(x, {6})); }, {x}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return sum(slice_row(x, 1)); }, {x}) < 1e-4);

        Tensor w = random_tensor({2, 1, 2, 2}, rs);
        Tensor img = random_tensor({1, 4, 4}, rs);
        CHECK(fd_max_rel_error([&] { return sum(conv(img, w, 1, 1)); }, {img, w}) < 1e-4);

        Tensor w3 = random_tensor({1, 1, 2, 2, 2}, rs);
        Tensor vol = random_tensor({2, 1, 3, 3, 3}, rs);  // batched
        CHECK(fd_max_rel_error([&] { return sum(conv(vol, w3, 2, 1)); }, {vol, w3}) < 1e-4);

        Tensor bias = random_tensor({3}, rs);
        CHECK(fd_max_rel_error([&] { return sum(bias_add(x, bias)); }, {x, bias}) < 1e-4);

        Tensor table = random_tensor({4, 3}, rs);
        CHECK(fd_max_rel_error([&] { return sum(gather_rows(table, {0, 2, 2})); }, {table}) <
              1e-4);

        Tensor p = random_tensor({4}, rs, 0.05, 0.95);
        CHECK(fd_max_rel_error([&] { return bce_with_probs(p, {1, 0, 1, 0}); }, {p}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return mean_log(p); }, {p}) < 1e-4);
        CHECK(fd_max_rel_error([&] { return mean_log1m(p); }, {p}) < 1e-4);

        Tensor r1 = random_tensor({3}, rs);
        Tensor r2 = random_tensor({3}, rs);
        CHECK(fd_max_rel_error([&] { return sum(stack_rows({r1, r2})); }, {r1, r2}) < 1e-4);

        Tensor pool = random_tensor({2, 2, 3, 3}, rs);
        CHECK(fd_max_rel_error([&] { return sum(global_avg_pool(pool)); }, {pool}) < 1e-4);
    }
}

TEST_CASE("backward is bitwise deterministic") {
    auto run = [] {
        auto rs = rng::substream(10, "det");
        Tensor a = random_tensor({4, 4}, rs);
        Tensor b = random_tensor({4, 4}, rs);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        Tensor loss = mean(mul(softmax(matmul(a, b), 1), sigmoid(a)));
        loss.backward();
        auto ga = a.grad();
        auto gb = b.grad();
        ga.insert(ga.end(), gb.begin(), gb.end());
        return ga;
    };
    CHECK(run() == run());
}

TEST_CASE("repeated backward on the same graph is idempotent") {
    Tensor x = Tensor::from_vector({1, 2});
    x.set_requires_grad(true);
    Tensor loss = sum(mul(x, x));
    loss.backward();
    auto g1 = x.grad();
    loss.backward();
    CHECK(x.grad() == g1);
}

TEST_CASE("no-grad scope detaches results") {
    Tensor x = Tensor::from_vector({1, 2});
    x.set_requires_grad(true);
    {
        NoGradGuard ng;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(mul(x, x).requires_grad());
}

TEST_CASE("tensor invariants: shape/data agreement and grad shape") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(static_cast<int64_t>(t.vec().size()) == 6);
    t.set_requires_grad(true);
    sum(t).backward();
    CHECK(t.grad().size() == 6);
    for (double g : t.grad()) CHECK(std::isfinite(g));
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({3}, {1.0, 2.0}), ShapeError);
}
