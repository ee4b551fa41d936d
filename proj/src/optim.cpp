#include "sghf/optim.hpp"

#include <cmath>

namespace sghf {

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        Slot s;
        s.name = name;
        s.param = p;
        s.m.assign(static_cast<size_t>(p.numel()), 0.0);
        s.v.assign(static_cast<size_t>(p.numel()), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        double* p = s.param.data();
        const bool has_grad = s.param.has_grad();
        const std::vector<double>* g = has_grad ? &s.param.grad() : nullptr;
        const size_t n = s.m.size();
        for (size_t i = 0; i < n; ++i) {
            const double gi = has_grad ? (*g)[i] : 0.0;
            if (!std::isfinite(gi)) {
                throw NumericalError("adam: non-finite gradient for parameter '" + s.name + "'");
            }
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

Tensor bce_loss(const Tensor& p, const std::vector<double>& y) { return bce_with_probs(p, y); }

GanLossMode gan_loss_mode_from_string(const std::string& s) {
    if (s == "saturating") return GanLossMode::Saturating;
    if (s == "non-saturating") return GanLossMode::NonSaturating;
    throw ConfigError("unknown generator loss mode: " + s);
}

std::string to_string(GanLossMode m) {
    return m == GanLossMode::Saturating ? "saturating" : "non-saturating";
}

Tensor gan_d_loss(const Tensor& y1_real, const Tensor& y1_fake, const Tensor& y2_real,
                  const Tensor& y2_fake, const std::vector<double>& c) {
    Tensor source = neg(add(mean_log(y1_real), mean_log1m(y1_fake)));
    Tensor cls = add(bce_loss(y2_real, c), bce_loss(y2_fake, c));
    return add(source, cls);
}

Tensor gan_g_loss(const Tensor& y1_fake, const Tensor& y2_fake, const std::vector<double>& c,
                  GanLossMode mode) {
    Tensor source = mode == GanLossMode::Saturating ? mean_log1m(y1_fake) : neg(mean_log(y1_fake));
    return add(source, bce_loss(y2_fake, c));
}

}  // namespace sghf
