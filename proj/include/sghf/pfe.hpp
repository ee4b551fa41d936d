#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "sghf/nn.hpp"
#include "sghf/optim.hpp"
#include "sghf/synth_data.hpp"

namespace sghf {

enum class FeatureSource { RealPathology, Synthesized };

// High-level feature vector plus the modality it came from.
struct FeatureVector {
    std::vector<double> values;
    FeatureSource source = FeatureSource::RealPathology;
};

struct PfeConfig {
    EncoderConfig vit;  // transformer settings; feature_dim is F
    AdamConfig adam;
    int epochs = 20;
    int batch = 8;  // subjects per optimizer step
};

// Patch-set classifier: transformer encoder -> F features -> sigmoid head.
// The penultimate features double as the synthesis targets downstream.
struct PfeModel {
    ParamStore params;
    VitEncoder encoder;
    Dense head;  // F -> 1 logit
    int64_t patch_size = 0;
};

PfeModel init_pfe(const PfeConfig& cfg, int64_t patch_size, uint64_t seed);

struct EpochLog {
    int epoch = 0;
    double loss = 0;
};

// Mean binary cross-entropy over shuffled subject batches. Returns the
// per-epoch loss log; aborts with the epoch index if the loss goes
// non-finite.
std::vector<EpochLog> train_pfe(PfeModel& model, const std::vector<const Subject*>& train,
                                const PfeConfig& cfg, uint64_t seed);

// Deterministic feature of the subject's patch set (evaluation mode).
FeatureVector extract_path_feature(const Subject& s, const PfeModel& model);

// Probability that the subject belongs to class 1.
double pfe_classify(const Subject& s, const PfeModel& model);

using FeatureCache = std::map<uint64_t, FeatureVector>;

FeatureCache build_feature_cache(const std::vector<const Subject*>& subjects,
                                 const PfeModel& model);

// Cache directory: manifest + one raw-double blob per subject.
void save_feature_cache(const FeatureCache& cache, const std::filesystem::path& dir);
FeatureCache load_feature_cache(const std::filesystem::path& dir);

}  // namespace sghf
