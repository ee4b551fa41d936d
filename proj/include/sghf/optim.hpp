#pragma once

#include <map>
#include <string>
#include <vector>

#include "sghf/tensor.hpp"

namespace sghf {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed set of named parameters. Parameters
// with no gradient buffer are treated as having zero gradient; non-finite
// gradients abort with the parameter name.
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg);

    void step();
    int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// -(1/N) sum_i [y log p + (1-y) log(1-p)] with probabilities clamped away
// from 0 and 1. Differentiable through p.
Tensor bce_loss(const Tensor& p, const std::vector<double>& y);

enum class GanLossMode { Saturating, NonSaturating };
GanLossMode gan_loss_mode_from_string(const std::string& s);
std::string to_string(GanLossMode m);

// Discriminator minimization objective: source term
// -[mean log y1_real + mean log(1-y1_fake)] plus class cross-entropy on
// both the real and the generated batch.
Tensor gan_d_loss(const Tensor& y1_real, const Tensor& y1_fake, const Tensor& y2_real,
                  const Tensor& y2_fake, const std::vector<double>& c);

// Generator objective; the class term is supervised on generated samples.
// Saturating: mean log(1-y1_fake). NonSaturating: -mean log y1_fake.
Tensor gan_g_loss(const Tensor& y1_fake, const Tensor& y2_fake, const std::vector<double>& c,
                  GanLossMode mode);

}  // namespace sghf
