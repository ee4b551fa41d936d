#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sghf/nn.hpp"
#include "test_support.hpp"

using namespace sghf;
using sghf::testing::fd_max_rel_error;
using sghf::testing::random_tensor;
using sghf::testing::random_tensor_away_from_zero;

TEST_CASE("relu closed forms and subgradient at zero") {
    Tensor x = Tensor::from_vector({-1, 0, 2});
    CHECK(relu(x).vec() == std::vector<double>{0, 0, 2});

    Tensor pos = Tensor::from_vector({0.5, 3, 7});
    CHECK(relu(pos).vec() == pos.vec());

    Tensor g = Tensor::from_vector({-1, 2});
    g.set_requires_grad(true);
    sum(relu(g)).backward();
    CHECK(g.grad() == std::vector<double>{0, 1});
}

TEST_CASE("batch_norm: constant batch collapses to beta") {
    ParamStore ps;
    auto bn = make_bn(ps, "bn", 3, 0.1);
    Tensor x = Tensor::full({4, 3}, 2.5);
    Tensor y = bn(x, true);
    for (double v : y.vec()) CHECK(std::fabs(v) <= 1e-2);  // eps-induced bound only
}

TEST_CASE("batch_norm standardizes per channel in training mode") {
    auto rs = rng::substream(21, "bn");
    ParamStore ps;
    auto bn = make_bn(ps, "bn", 2, 0.1);
    Tensor x = random_tensor({6, 2, 3}, rs, -40.0, 90.0);
    Tensor y = bn(x, true);
    for (int64_t c = 0; c < 2; ++c) {
        double m = 0.0, v = 0.0;
        for (int64_t b = 0; b < 6; ++b)
            for (int64_t s = 0; s < 3; ++s) m += y.at({b, c, s});
        m /= 18.0;
        for (int64_t b = 0; b < 6; ++b)
            for (int64_t s = 0; s < 3; ++s) v += (y.at({b, c, s}) - m) * (y.at({b, c, s}) - m);
        v /= 18.0;
        CHECK(std::fabs(m) <= 1e-10);
        CHECK(std::fabs(v - 1.0) <= 1e-6);
    }
}

TEST_CASE("batch_norm matches the direct formula oracle within 1e-12") {
    auto rs = rng::substream(22, "bn-oracle");
    for (int it = 0; it < 10; ++it) {
        ParamStore ps;
        auto bn = make_bn(ps, "bn", 3, 0.1);
        for (auto& v : bn.gamma.vec()) v = rs.uniform(0.5, 2.0);
        for (auto& v : bn.beta.vec()) v = rs.uniform(-1.0, 1.0);
        Tensor x = random_tensor({5, 3}, rs);
        Tensor y = bn(x, true);
        for (int64_t c = 0; c < 3; ++c) {
            double m = 0.0;
            for (int64_t b = 0; b < 5; ++b) m += x.at({b, c});
            m /= 5.0;
            double var = 0.0;
            for (int64_t b = 0; b < 5; ++b) var += (x.at({b, c}) - m) * (x.at({b, c}) - m);
            var /= 5.0;
            for (int64_t b = 0; b < 5; ++b) {
                const double want =
                    bn.gamma.data()[c] * (x.at({b, c}) - m) / std::sqrt(var + 1e-5) +
                    bn.beta.data()[c];
                CHECK(std::fabs(y.at({b, c}) - want) <= 1e-12);
            }
        }
    }
}

TEST_CASE("batch_norm rejects single-sample training batches") {
    ParamStore ps;
    auto bn = make_bn(ps, "bn", 2, 0.1);
    CHECK_THROWS_AS(bn(Tensor::zeros({1, 2}), true), ShapeError);
    CHECK_NOTHROW(bn(Tensor::zeros({1, 2}), false));
}

TEST_CASE("batch_norm eval mode consumes running stats and stays pure") {
    auto rs = rng::substream(23, "bn-eval");
    ParamStore ps;
    auto bn = make_bn(ps, "bn", 2, 0.5);
    Tensor x = random_tensor({8, 2}, rs, 1.0, 3.0);
    (void)bn(x, true);
    Tensor probe = Tensor::full({1, 2}, 2.0);
    Tensor e1 = bn(probe, false);
    Tensor e2 = bn(probe, false);
    CHECK(e1.vec() == e2.vec());
}

TEST_CASE("batch_norm gradients match central differences") {
    auto rs = rng::substream(24, "bn-fd");
    for (int it = 0; it < 5; ++it) {
        ParamStore ps;
        auto bn = make_bn(ps, "bn" + std::to_string(it), 2, 0.1);
        Tensor x = random_tensor({4, 2, 2}, rs);
        // Training mode recomputes batch stats on every forward, so the FD
        // probes see a consistent function even as running buffers advance.
        auto forward = [&] { return mean(bn(x, true)); };
        CHECK(fd_max_rel_error(forward, {x, bn.gamma, bn.beta}) < 1e-4);

        auto forward_sq = [&] {
            Tensor y = bn(x, true);
            return mean(mul(y, y));
        };
        CHECK(fd_max_rel_error(forward_sq, {x, bn.gamma, bn.beta}) < 1e-4);
    }
}

TEST_CASE("dense: identity weights, hand example, oracle") {
    ParamStore ps;
    auto rs = rng::substream(25, "dense");
    auto d = make_dense(ps, "d", 2, 2, rs);
    d.w.vec() = {1, 0, 0, 1};
    d.b.vec() = {0, 0};
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(d(x).vec() == x.vec());

    auto d2 = make_dense(ps, "d2", 2, 1, rs);
    d2.w.vec() = {1, 2};
    d2.b.vec() = {3};
    Tensor one({1, 2}, {1, 1});
    CHECK(d2(one).value() == doctest::Approx(6.0).epsilon(1e-15));

    auto d3 = make_dense(ps, "d3", 4, 3, rs);
    Tensor r = random_tensor({5, 4}, rs);
    Tensor y = d3(r);
    Tensor want = bias_add(matmul(r, d3.w), d3.b);
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(std::fabs(y.data()[i] - want.data()[i]) <= 1e-12);
    }
}

namespace {

// Explicit per-head attention oracle with O(n^2) loops.
std::vector<double> attention_oracle(const Tensor& x, const AttentionParams& p,
                                     std::vector<double>* row_sums = nullptr) {
    const int64_t n = x.dim(0), dm = p.d_model, dk = p.d_k;
    std::vector<double> cat(static_cast<size_t>(n * p.heads * dk), 0.0);
    for (int64_t t = 0; t < p.heads; ++t) {
        std::vector<double> q(static_cast<size_t>(n * dk)), k(q), v(q);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < dk; ++j) {
                double aq = 0, ak = 0, av = 0;
                for (int64_t l = 0; l < dm; ++l) {
                    aq += x.at({i, l}) * p.w_q[static_cast<size_t>(t)].at({l, j});
                    ak += x.at({i, l}) * p.w_k[static_cast<size_t>(t)].at({l, j});
                    av += x.at({i, l}) * p.w_v[static_cast<size_t>(t)].at({l, j});
                }
                q[static_cast<size_t>(i * dk + j)] = aq;
                k[static_cast<size_t>(i * dk + j)] = ak;
                v[static_cast<size_t>(i * dk + j)] = av;
            }
        for (int64_t i = 0; i < n; ++i) {
            std::vector<double> score(static_cast<size_t>(n));
            double mx = -1e300;
            for (int64_t j = 0; j < n; ++j) {
                double s = 0;
                for (int64_t l = 0; l < dk; ++l)
                    s += q[static_cast<size_t>(i * dk + l)] * k[static_cast<size_t>(j * dk + l)];
                score[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, score[static_cast<size_t>(j)]);
            }
            double z = 0;
            for (auto& s : score) {
                s = std::exp(s - mx);
                z += s;
            }
            double rowsum = 0;
            for (auto& s : score) {
                s /= z;
                rowsum += s;
            }
            if (row_sums) row_sums->push_back(rowsum);
            for (int64_t l = 0; l < dk; ++l) {
                double acc = 0;
                for (int64_t j = 0; j < n; ++j)
                    acc += score[static_cast<size_t>(j)] * v[static_cast<size_t>(j * dk + l)];
                cat[static_cast<size_t>(i * p.heads * dk + t * dk + l)] = acc;
            }
        }
    }
    std::vector<double> out(static_cast<size_t>(n * dm), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dm; ++j) {
            double acc = 0;
            for (int64_t l = 0; l < p.heads * dk; ++l)
                acc += cat[static_cast<size_t>(i * p.heads * dk + l)] * p.w_o.at({l, j});
            out[static_cast<size_t>(i * dm + j)] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("attention: single token reduces to value projection") {
    auto rs = rng::substream(26, "attn1");
    ParamStore ps;
    auto p = make_attention(ps, "a", 8, 2, 4, rs);
    Tensor x = random_tensor({1, 8}, rs);
    Tensor y = multi_head_attention(x, p);
    // weight on the only key is exactly 1, so out = concat_t(x W_v_t) W_o
    Tensor cat = concat(matmul(x, p.w_v[0]), matmul(x, p.w_v[1]), 1);
    Tensor want = matmul(cat, p.w_o);
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(std::fabs(y.data()[i] - want.data()[i]) <= 1e-12);
    }
}

TEST_CASE("attention: identical tokens give identical output rows") {
    auto rs = rng::substream(27, "attn2");
    ParamStore ps;
    auto p = make_attention(ps, "a", 8, 2, 4, rs);
    Tensor row = random_tensor({8}, rs);
    Tensor x = stack_rows({row, row, row});
    Tensor y = multi_head_attention(x, p);
    for (int64_t i = 1; i < 3; ++i)
        for (int64_t j = 0; j < 8; ++j)
            CHECK(y.at({i, j}) == doctest::Approx(y.at({0, j})).epsilon(1e-12));
}

TEST_CASE("attention matches the loop oracle within 1e-10; rows sum to 1") {
    auto rs = rng::substream(28, "attn3");
    for (int it = 0; it < 10; ++it) {
        ParamStore ps;
        auto p = make_attention(ps, "a", 8, 2, 4, rs);
        Tensor x = random_tensor({5, 8}, rs);
        Tensor y = multi_head_attention(x, p);
        std::vector<double> row_sums;
        auto ref = attention_oracle(x, p, &row_sums);
        for (int64_t i = 0; i < y.numel(); ++i) {
            CHECK(std::fabs(y.data()[i] - ref[static_cast<size_t>(i)]) <= 1e-10);
        }
        for (double s : row_sums) CHECK(std::fabs(s - 1.0) <= 1e-10);
    }
}

TEST_CASE("attention rejects mismatched model width") {
    auto rs = rng::substream(29, "attn4");
    ParamStore ps;
    auto p = make_attention(ps, "a", 8, 2, 4, rs);
    CHECK_THROWS_AS(multi_head_attention(Tensor::zeros({3, 6}), p), ShapeError);
    CHECK_THROWS_AS(make_attention(ps, "bad", 8, 3, 4, rs), ConfigError);
}

TEST_CASE("cnn encoder: shape contract, zero input, eval determinism") {
    auto rs = rng::substream(30, "cnn");
    EncoderConfig cfg;
    cfg.backbone = "cnn-small";
    cfg.feature_dim = 7;
    cfg.base_channels = 4;
    ParamStore ps;
    auto enc = CnnEncoder::build(ps, "enc", cfg, 1, 3, rs);

    Tensor zero = Tensor::zeros({2, 1, 8, 8, 6});
    Tensor fz = enc.forward(zero, true);
    CHECK(fz.shape() == Shape{2, 7});
    for (double v : fz.vec()) CHECK(std::fabs(v) <= 1e-12);  // zero biases everywhere

    Tensor x = random_tensor({2, 1, 8, 8, 6}, rs);
    Tensor f1 = enc.forward(x, false);
    Tensor f2 = enc.forward(x, false);
    CHECK(f1.vec() == f2.vec());

    EncoderConfig med = cfg;
    med.backbone = "cnn-medium";
    ParamStore ps2;
    auto enc2 = CnnEncoder::build(ps2, "enc", med, 1, 3, rs);
    CHECK(enc2.forward(x, false).shape() == Shape{2, 7});
    CHECK(ps2.trainable_count() > ps.trainable_count());

    // 2-D flavor
    ParamStore ps3;
    auto enc3 = CnnEncoder::build(ps3, "enc", cfg, 1, 2, rs);
    CHECK(enc3.forward(random_tensor({3, 1, 12, 12}, rs), false).shape() == Shape{3, 7});

    CHECK_THROWS_AS(enc.forward(Tensor::zeros({2, 2, 8, 8, 6}), false), ShapeError);
}

TEST_CASE("vit encoder: single patch, permutation invariance, shape") {
    auto rs = rng::substream(31, "vit");
    EncoderConfig cfg;
    cfg.backbone = "vit";
    cfg.feature_dim = 6;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.d_k = 4;
    cfg.blocks = 1;
    cfg.subpatch = 4;
    ParamStore ps;
    auto vit = VitEncoder::build(ps, "vit", cfg, 8, 1, rs);

    Tensor p1 = random_tensor({8, 8}, rs);
    Tensor f = vit.encode({p1});
    CHECK(f.shape() == Shape{6});

    Tensor p2 = random_tensor({8, 8}, rs);
    Tensor p3 = random_tensor({8, 8}, rs);
    Tensor fa = vit.encode({p1, p2, p3});
    Tensor fb = vit.encode({p3, p1, p2});
    // position embeddings index tile location inside each patch only, so
    // reordering whole patches cannot change the result
    for (int64_t i = 0; i < 6; ++i) {
        CHECK(std::fabs(fa.data()[i] - fb.data()[i]) <= 1e-10);
    }

    EncoderConfig nopos = cfg;
    nopos.pos_embedding = false;
    ParamStore ps2;
    auto vit2 = VitEncoder::build(ps2, "vit", nopos, 8, 1, rs);
    Tensor ga = vit2.encode({p1, p2});
    Tensor gb = vit2.encode({p2, p1});
    for (int64_t i = 0; i < 6; ++i) {
        CHECK(std::fabs(ga.data()[i] - gb.data()[i]) <= 1e-10);
    }

    CHECK_THROWS_AS(vit.encode({}), ShapeError);
    CHECK_THROWS_AS(vit.encode({Tensor::zeros({6, 6})}), ShapeError);
}

TEST_CASE("vit encoder gradients match central differences") {
    auto rs = rng::substream(32, "vit-fd");
    EncoderConfig cfg;
    cfg.backbone = "vit";
    cfg.feature_dim = 3;
    cfg.d_model = 4;
    cfg.heads = 1;
    cfg.d_k = 4;
    cfg.blocks = 1;
    cfg.subpatch = 4;
    cfg.mlp_ratio = 2;
    ParamStore ps;
    auto vit = VitEncoder::build(ps, "vit", cfg, 4, 1, rs);
    std::vector<Tensor> patches{random_tensor({4, 4}, rs), random_tensor({4, 4}, rs)};
    auto forward = [&] { return mean(vit.encode(patches)); };
    std::vector<Tensor> leaves;
    for (const auto& [name, e] : ps.all()) {
        if (e.trainable) leaves.push_back(e.tensor);
    }
    CHECK(fd_max_rel_error(forward, leaves) < 1e-4);
}

TEST_CASE("full cnn network gradient check on a tiny config") {
    auto rs = rng::substream(33, "cnn-fd");
    EncoderConfig cfg;
    cfg.backbone = "cnn-small";
    cfg.feature_dim = 8;
    cfg.base_channels = 2;
    ParamStore ps;
    auto enc = CnnEncoder::build(ps, "enc", cfg, 1, 3, rs);
    Tensor x = random_tensor({2, 1, 6, 6, 4}, rs);
    auto forward = [&] {
        Tensor f = enc.forward(x, true);
        return mean(mul(f, f));
    };
    std::vector<Tensor> leaves{x};
    for (const auto& [name, e] : ps.all()) {
        if (e.trainable) leaves.push_back(e.tensor);
    }
    CHECK(fd_max_rel_error(forward, leaves) < 1e-4);
}

TEST_CASE("param store: registration, trainable census, duplicate guard") {
    ParamStore ps;
    auto rs = rng::substream(34, "ps");
    make_dense(ps, "d", 3, 2, rs);
    make_bn(ps, "bn", 2, 0.1);
    CHECK(ps.trainable_count() == 3 * 2 + 2 + 2 + 2);  // w, b, gamma, beta
    CHECK(ps.has("d.w"));
    CHECK_FALSE(ps.has("nope"));
    CHECK_THROWS_AS(ps.add("d.w", Tensor::zeros({1})), ConfigError);
    CHECK_THROWS_AS(ps.get("nope"), ConfigError);
    CHECK(ps.trainable().size() == 4);  // running stats excluded
}
