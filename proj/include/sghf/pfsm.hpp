#pragma once

#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "sghf/nn.hpp"
#include "sghf/optim.hpp"
#include "sghf/pfe.hpp"
#include "sghf/synth_data.hpp"

namespace sghf {

// Preprocessed model-input volumes keyed by subject id.
using VoiMap = std::map<uint64_t, Tensor>;
VoiMap preprocess_all(const std::vector<const Subject*>& subjects, const Shape& voi,
                      int64_t dilate_r = 3);

struct PfsmConfig {
    EncoderConfig gen;  // generator backbone; feature_dim is F
    Shape voi{24, 24, 12};
    int64_t disc_hidden = 64;
    AdamConfig adam_g, adam_d;
    int steps = 300;  // outer iterations: k_d discriminator updates + 1 generator update
    int k_d = 5;
    int batch = 8;
    GanLossMode g_mode = GanLossMode::NonSaturating;
    double lambda_p = 1.0;
    // Channel value fed to the generator while training. In neutral mode
    // (0.5) the class reaches the generator only through the class-head
    // objective, so synthesis never depends on a label that is unknown at
    // inference; true-label mode feeds the label for protocol-faithful
    // ablations.
    bool true_label_conditioning = false;
    double neutral_c = 0.5;
};

// Volume-conditional feature generator. The class label enters as an
// extra constant-valued input channel.
struct Generator {
    ParamStore params;
    VolumeEncoder enc;  // in_channels = 2
    Shape voi;
    int64_t feature_dim() const { return enc.feature_dim(); }
};

Generator init_generator(const PfsmConfig& cfg, uint64_t seed);

// vols: preprocessed rank-3 volumes; c: one class value per volume.
Tensor generator_forward_batch(const Generator& g, const std::vector<Tensor>& vols,
                               const std::vector<double>& c, bool training);

// Single-subject synthesis (evaluation mode, deterministic).
FeatureVector synthesize_feature(const Subject& s, const Generator& g, double c);

// Three fully-connected layers, the first two each followed by ReLU then
// batch normalization, with separate sigmoid heads for source (real vs
// generated) and class.
struct Discriminator {
    ParamStore params;
    Dense fc1, fc2, fc3;
    BatchNormLayer bn1, bn2;
    Dense head_src, head_cls;

    // x: [batch x F] -> (y1 [batch], y2 [batch]) in (0,1).
    std::pair<Tensor, Tensor> forward(const Tensor& x, bool training) const;
};

Discriminator init_discriminator(int64_t feature_dim, int64_t hidden, double bn_momentum,
                                 uint64_t seed);

struct GanLogRow {
    int step = 0;
    double loss_d = 0, loss_g = 0;
    double acc_src = 0, acc_cls = 0;
};

// Test/diagnostic instrumentation; called right after each backward pass,
// before gradient buffers are cleared.
struct PfsmHooks {
    std::function<void(int step, const Generator&, const Discriminator&)> after_d_backward;
    std::function<void(int step, const Generator&, const Discriminator&)> after_g_backward;
};

struct PfsmResult {
    Generator gen;
    Discriminator disc;
    std::vector<GanLogRow> log;
};

// Alternating adversarial loop: per outer step, k_d discriminator updates
// on fresh batches (generator sampled without gradients), then one
// generator update through an evaluation-mode discriminator.
PfsmResult train_pfsm(const std::vector<const Subject*>& train, const FeatureCache& cache,
                      const VoiMap& vois, const PfsmConfig& cfg, uint64_t seed,
                      const PfsmHooks* hooks = nullptr);

std::string gan_log_to_csv(const std::vector<GanLogRow>& log);

}  // namespace sghf
