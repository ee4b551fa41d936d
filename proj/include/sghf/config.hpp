#pragma once

#include <cstdint>
#include <string>

#include "sghf/tensor.hpp"

namespace sghf {

struct DatasetConfig {
    int64_t n_subjects = 200;
    double balance = 0.5;
    Shape volume{32, 32, 16};
    int64_t n_patches = 8;
    int64_t patch = 64;
    double shift = 0.0;
};

struct ModelConfig {
    std::string backbone = "cnn-small";  // rfem/generator: cnn-small | cnn-medium | vit
    int64_t feature_dim = 64;
    int64_t base_channels = 22;
    double bn_momentum = 0.1;
    Shape voi{16, 16, 10};
    int64_t disc_hidden = 64;
    // transformer settings (pathology encoder; also the rfem when
    // backbone == "vit")
    int64_t vit_d_model = 32;
    int64_t vit_heads = 4;
    int64_t vit_d_k = 8;
    int64_t vit_blocks = 2;
    int64_t vit_subpatch = 32;
    int64_t vit_volume_subpatch = 12;  // token tile over axial slices (vit backbone)
    int64_t vit_mlp_ratio = 2;
    bool vit_pos_embedding = true;
};

struct OptimSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int epochs_pfe = 12;
    int epochs_sghf = 12;
    int gan_steps = 200;
    int batch_2d = 8;
    int batch_3d = 8;
    int gan_batch = 8;
    int k_d = 5;
    std::string g_loss_mode = "non-saturating";
};

struct RunConfig {
    uint64_t seed = 1;
    std::string variant = "sghf";
    DatasetConfig dataset;
    ModelConfig model;
    OptimSettings optim;
    double lambda_r = 1.0;
    double lambda_p = 1.0;
    int folds = 5;
    std::string eval_conditioning = "neutral";  // neutral | true-label
    std::string pfsm_scope = "per-fold";        // per-fold | global
};

// Desk-scale defaults (CPU-trainable in minutes).
RunConfig default_config();
// Full-scale hyperparameters as published; present for the record, far
// beyond desk runtimes.
RunConfig paper_scale_config();
// Reduced sizes used by the long-running acceptance experiments.
RunConfig acceptance_small_config();

RunConfig config_by_preset(const std::string& name);

// Throws ConfigError on any invalid field.
void validate(const RunConfig& cfg);

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig load_config_file(const std::string& path);

// SHA-256 of the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);

}  // namespace sghf
