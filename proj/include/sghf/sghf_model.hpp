#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sghf/pfsm.hpp"

namespace sghf {

enum class Variant { Sghf, BenchmarkRf, SpfOnly, DoubleRf };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct SghfConfig {
    EncoderConfig rfem;  // radiological encoder; feature_dim is F
    Shape voi{24, 24, 12};
    AdamConfig adam;
    int epochs = 20;
    int batch = 8;
    double lambda_r = 1.0;
    double neutral_c = 0.5;        // class channel outside true-label mode
    bool true_label_conditioning = false;  // ablation: feed the true label
                                           // to the generator in training
                                           // and at inference
};

// Fused classifier. Two-branch variants concatenate a synthesized
// pathology-side feature (or a second trainable encoder) with the
// radiological feature before the head. The generator reference is
// read-only; its parameters live in their own store and are never
// optimized here.
struct SghfModel {
    Variant variant = Variant::BenchmarkRf;
    ParamStore params;  // trainable encoders + heads only
    std::optional<VolumeEncoder> rfem;
    std::optional<VolumeEncoder> rfem2;  // double-rf second branch
    std::shared_ptr<const Generator> frozen;
    Dense fuse_hidden;  // 2F -> F (two-branch variants)
    Dense head;         // F -> 1
    bool two_branch = false;
    Shape voi{24, 24, 12};
    int64_t feature_dim = 0;
    double neutral_c = 0.5;
    bool true_label_conditioning = false;
};

// `frozen` is required for sghf and spf-only, forbidden elsewhere.
SghfModel build_model(Variant v, const SghfConfig& cfg, std::shared_ptr<const Generator> frozen,
                      uint64_t seed);

// vols: preprocessed rank-3 volumes; labels drive the generator's class
// channel (training uses the true label). Returns probabilities [batch].
Tensor forward_batch(const SghfModel& m, const std::vector<Tensor>& vols,
                     const std::vector<double>& c_channel, bool training);

struct TrainHooks {
    // Called after each backward pass, before the optimizer step, so
    // gradient buffers are inspectable.
    std::function<void(int step, const SghfModel&)> after_backward;
};

std::vector<EpochLog> train_sghf(SghfModel& m, const std::vector<const Subject*>& train,
                                 const VoiMap& vois, const SghfConfig& cfg, uint64_t seed,
                                 const TrainHooks* hooks = nullptr);

struct Prediction {
    double p = 0;
    int label = 0;  // 1 iff p >= 0.5
};

Prediction predict(const SghfModel& m, const Subject& s);

int64_t trainable_param_count(const SghfModel& m);

std::string epoch_log_to_csv(const std::vector<EpochLog>& log);

}  // namespace sghf
