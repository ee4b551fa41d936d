#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sghf/rng.hpp"
#include "sghf/tensor.hpp"

namespace sghf::testing {

inline Tensor random_tensor(Shape shape, rng::Stream& rs, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rs.uniform(lo, hi);
    return t;
}

// Draw values bounded away from zero so kinked ops (relu) have a clean
// two-sided derivative at every sample point.
inline Tensor random_tensor_away_from_zero(Shape shape, rng::Stream& rs, double margin = 1e-2) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) {
        double x = rs.uniform(margin, 1.0);
        v = rs.uniform() < 0.5 ? -x : x;
    }
    return t;
}

// Central finite-difference check of d(loss)/d(leaf) for every listed
// leaf. `forward` must rebuild the scalar loss from current leaf values.
// Returns the max relative error max(|a-n| / max(1, |a|, |n|)).
inline double fd_max_rel_error(const std::function<Tensor()>& forward,
                               std::vector<Tensor> leaves, double h = 1e-5) {
    for (auto& l : leaves) l.set_requires_grad(true);
    Tensor loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) {
        analytic.push_back(l.has_grad() ? l.grad() : std::vector<double>(l.numel(), 0.0));
    }
    double max_err = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        for (int64_t i = 0; i < leaf.numel(); ++i) {
            const double keep = leaf.data()[i];
            leaf.data()[i] = keep + h;
            const double up = forward().value();
            leaf.data()[i] = keep - h;
            const double dn = forward().value();
            leaf.data()[i] = keep;
            const double numeric = (up - dn) / (2.0 * h);
            const double a = analytic[li][static_cast<size_t>(i)];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            max_err = std::max(max_err, std::fabs(a - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace sghf::testing
