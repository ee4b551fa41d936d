#pragma once

// Brute-force reference implementations used by the acceptance suite.
// These stay deliberately independent of the library's compute paths.

#include <cmath>
#include <vector>

#include "sghf/nn.hpp"
#include "sghf/tensor.hpp"

namespace sghf::oracles {

inline std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t l = 0; l < k; ++l)
                y[static_cast<size_t>(i * n + j)] += a.at({i, l}) * b.at({l, j});
    return y;
}

// Unbatched cross-correlation with zero padding, any spatial rank in the
// kernel (2-D kernels pass x rank-3, 3-D kernels x rank-4).
inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, int64_t stride,
                                      int64_t pad) {
    const int sr = static_cast<int>(w.rank()) - 2;
    const int64_t cin = x.dim(0), cout = w.dim(0);
    int64_t in[3] = {1, 1, 1}, k[3] = {1, 1, 1}, out[3] = {1, 1, 1}, p[3] = {0, 0, 0};
    for (int i = 0; i < sr; ++i) {
        in[3 - sr + i] = x.dim(1 + static_cast<size_t>(i));
        k[3 - sr + i] = w.dim(2 + static_cast<size_t>(i));
        p[3 - sr + i] = pad;
    }
    for (int i = 0; i < 3; ++i) out[i] = (in[i] + 2 * p[i] - k[i]) / stride + 1;
    std::vector<double> y(static_cast<size_t>(cout * out[0] * out[1] * out[2]), 0.0);
    auto xat = [&](int64_t c, int64_t a, int64_t b2, int64_t d) {
        return x.data()[((c * in[0] + a) * in[1] + b2) * in[2] + d];
    };
    auto wat = [&](int64_t co, int64_t ci, int64_t a, int64_t b2, int64_t d) {
        return w.data()[(((co * cin + ci) * k[0] + a) * k[1] + b2) * k[2] + d];
    };
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t o0 = 0; o0 < out[0]; ++o0)
            for (int64_t o1 = 0; o1 < out[1]; ++o1)
                for (int64_t o2 = 0; o2 < out[2]; ++o2) {
                    double acc = 0;
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t k0 = 0; k0 < k[0]; ++k0)
                            for (int64_t k1 = 0; k1 < k[1]; ++k1)
                                for (int64_t k2 = 0; k2 < k[2]; ++k2) {
                                    const int64_t i0 = o0 * stride - p[0] + k0;
                                    const int64_t i1 = o1 * stride - p[1] + k1;
                                    const int64_t i2 = o2 * stride - p[2] + k2;
                                    if (i0 < 0 || i0 >= in[0] || i1 < 0 || i1 >= in[1] ||
                                        i2 < 0 || i2 >= in[2])
                                        continue;
                                    acc += xat(ci, i0, i1, i2) * wat(co, ci, k0, k1, k2);
                                }
                    y[static_cast<size_t>(((co * out[0] + o0) * out[1] + o1) * out[2] + o2)] =
                        acc;
                }
    return y;
}

// Per-head O(n^2) attention loops; optionally records attention row sums.
inline std::vector<double> attention(const Tensor& x, const AttentionParams& p,
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

// Pair counting with half credit for ties.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

}  // namespace sghf::oracles
