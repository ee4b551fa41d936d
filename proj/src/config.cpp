#include "sghf/config.hpp"

#include <fstream>

#include <json.hpp>

#include "sghf/optim.hpp"
#include "sghf/sha256.hpp"

namespace sghf {

RunConfig default_config() { return RunConfig{}; }

RunConfig paper_scale_config() {
    RunConfig c;
    c.dataset.n_subjects = 191;
    c.dataset.volume = {320, 320, 160};
    c.dataset.n_patches = 16;
    c.dataset.patch = 560;
    c.model.feature_dim = 512;
    c.model.base_channels = 64;
    c.model.voi = {256, 256, 128};
    c.model.disc_hidden = 512;
    c.model.vit_heads = 12;
    c.model.vit_d_k = 64;
    c.model.vit_d_model = 768;
    c.model.vit_blocks = 12;
    c.model.vit_subpatch = 140;
    c.model.vit_volume_subpatch = 64;
    c.model.vit_mlp_ratio = 4;
    c.optim.lr = 1e-4;
    c.optim.epochs_pfe = 400;
    c.optim.epochs_sghf = 400;
    c.optim.gan_steps = 40000;
    c.optim.batch_2d = 16;
    c.optim.batch_3d = 2;
    c.optim.gan_batch = 2;
    return c;
}

RunConfig acceptance_small_config() {
    RunConfig c;
    c.dataset.n_subjects = 200;
    c.dataset.volume = {16, 16, 10};
    c.dataset.n_patches = 4;
    c.dataset.patch = 32;
    // harder acquisition setting: the patch modality stays nearly clean
    // while the few-voxel volume view becomes genuinely noisy
    c.dataset.shift = 1.0;
    c.model.feature_dim = 16;
    c.model.base_channels = 6;
    c.model.voi = {6, 6, 4};
    c.model.disc_hidden = 16;
    c.model.vit_d_model = 16;
    c.model.vit_heads = 4;
    c.model.vit_d_k = 4;
    c.model.vit_blocks = 1;
    c.model.vit_subpatch = 16;
    c.model.vit_volume_subpatch = 6;
    c.optim.lr = 2e-3;
    c.optim.epochs_pfe = 10;
    c.optim.epochs_sghf = 8;
    c.optim.gan_steps = 300;
    return c;
}

RunConfig config_by_preset(const std::string& name) {
    if (name == "desk") return default_config();
    if (name == "paper-scale") return paper_scale_config();
    if (name == "acceptance-small") return acceptance_small_config();
    throw ConfigError("unknown preset: " + name);
}

void validate(const RunConfig& cfg) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    require(cfg.dataset.n_subjects >= 1, "dataset.n_subjects must be >= 1");
    require(cfg.dataset.balance >= 0.0 && cfg.dataset.balance <= 1.0,
            "dataset.balance must be in [0,1]");
    require(cfg.dataset.volume.size() == 3, "dataset.volume must have 3 dims");
    for (auto d : cfg.dataset.volume) require(d >= 1, "dataset.volume dims must be >= 1");
    require(cfg.dataset.n_patches >= 1, "dataset.n_patches must be >= 1");
    require(cfg.dataset.patch >= 1, "dataset.patch must be >= 1");
    require(cfg.dataset.shift >= 0.0, "dataset.shift must be >= 0");
    require(cfg.model.backbone == "cnn-small" || cfg.model.backbone == "cnn-medium" ||
                cfg.model.backbone == "vit",
            "model.backbone must be cnn-small, cnn-medium or vit");
    require(cfg.model.feature_dim >= 1, "model.feature_dim must be >= 1");
    require(cfg.model.base_channels >= 1, "model.base_channels must be >= 1");
    require(cfg.model.bn_momentum > 0.0 && cfg.model.bn_momentum <= 1.0,
            "model.bn_momentum must be in (0,1]");
    require(cfg.model.voi.size() == 3, "model.voi must have 3 dims");
    for (size_t i = 0; i < 3; ++i) {
        require(cfg.model.voi[i] >= 1, "model.voi dims must be >= 1");
        require(cfg.model.voi[i] <= cfg.dataset.volume[i],
                "model.voi must fit inside dataset.volume");
    }
    require(cfg.model.disc_hidden >= 1, "model.disc_hidden must be >= 1");
    require(cfg.model.vit_heads >= 1 && cfg.model.vit_d_k >= 1,
            "vit head settings must be >= 1");
    require(cfg.model.vit_heads * cfg.model.vit_d_k == cfg.model.vit_d_model,
            "vit_d_model must equal vit_heads*vit_d_k");
    require(cfg.model.vit_blocks >= 1, "model.vit_blocks must be >= 1");
    require(cfg.model.vit_subpatch >= 1 && cfg.dataset.patch % cfg.model.vit_subpatch == 0,
            "vit_subpatch must divide dataset.patch");
    if (cfg.model.backbone == "vit") {
        require(cfg.model.voi[0] == cfg.model.voi[1],
                "vit backbone needs square axial slices (voi[0] == voi[1])");
        require(cfg.model.vit_volume_subpatch >= 1 &&
                    cfg.model.voi[0] % cfg.model.vit_volume_subpatch == 0,
                "vit_volume_subpatch must divide voi[0]");
    }
    require(cfg.model.vit_mlp_ratio >= 1, "model.vit_mlp_ratio must be >= 1");
    require(cfg.optim.lr > 0.0, "optim.lr must be > 0");
    require(cfg.optim.beta1 >= 0.0 && cfg.optim.beta1 < 1.0, "optim.beta1 must be in [0,1)");
    require(cfg.optim.beta2 >= 0.0 && cfg.optim.beta2 < 1.0, "optim.beta2 must be in [0,1)");
    require(cfg.optim.eps > 0.0, "optim.eps must be > 0");
    require(cfg.optim.epochs_pfe >= 0, "optim.epochs_pfe must be >= 0");
    require(cfg.optim.epochs_sghf >= 0, "optim.epochs_sghf must be >= 0");
    require(cfg.optim.gan_steps >= 0, "optim.gan_steps must be >= 0");
    require(cfg.optim.batch_2d >= 1 && cfg.optim.batch_3d >= 1 && cfg.optim.gan_batch >= 2,
            "batches must be >= 1 (gan_batch >= 2)");
    require(cfg.optim.k_d >= 0, "optim.k_d must be >= 0");
    (void)gan_loss_mode_from_string(cfg.optim.g_loss_mode);
    require(cfg.lambda_r >= 0.0 && cfg.lambda_p >= 0.0, "lambda weights must be >= 0");
    require(cfg.folds >= 2, "folds must be >= 2");
    require(cfg.eval_conditioning == "neutral" || cfg.eval_conditioning == "true-label",
            "eval_conditioning must be neutral or true-label");
    require(cfg.pfsm_scope == "per-fold" || cfg.pfsm_scope == "global",
            "pfsm_scope must be per-fold or global");
    (void)0;
    {
        // variant names are shared with the CLI; check against the known set
        if (cfg.variant != "sghf" && cfg.variant != "benchmark-rf" &&
            cfg.variant != "spf-only" && cfg.variant != "double-rf") {
            throw ConfigError("config: unknown variant " + cfg.variant);
        }
    }
}

namespace {

nlohmann::json to_json(const RunConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"variant", c.variant},
        {"dataset",
         {{"n_subjects", c.dataset.n_subjects},
          {"balance", c.dataset.balance},
          {"volume", c.dataset.volume},
          {"n_patches", c.dataset.n_patches},
          {"patch", c.dataset.patch},
          {"shift", c.dataset.shift}}},
        {"model",
         {{"backbone", c.model.backbone},
          {"feature_dim", c.model.feature_dim},
          {"base_channels", c.model.base_channels},
          {"bn_momentum", c.model.bn_momentum},
          {"voi", c.model.voi},
          {"disc_hidden", c.model.disc_hidden},
          {"vit_d_model", c.model.vit_d_model},
          {"vit_heads", c.model.vit_heads},
          {"vit_d_k", c.model.vit_d_k},
          {"vit_blocks", c.model.vit_blocks},
          {"vit_subpatch", c.model.vit_subpatch},
          {"vit_volume_subpatch", c.model.vit_volume_subpatch},
          {"vit_mlp_ratio", c.model.vit_mlp_ratio},
          {"vit_pos_embedding", c.model.vit_pos_embedding}}},
        {"optim",
         {{"lr", c.optim.lr},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps},
          {"epochs_pfe", c.optim.epochs_pfe},
          {"epochs_sghf", c.optim.epochs_sghf},
          {"gan_steps", c.optim.gan_steps},
          {"batch_2d", c.optim.batch_2d},
          {"batch_3d", c.optim.batch_3d},
          {"gan_batch", c.optim.gan_batch},
          {"k_d", c.optim.k_d},
          {"g_loss_mode", c.optim.g_loss_mode}}},
        {"lambda_r", c.lambda_r},
        {"lambda_p", c.lambda_p},
        {"folds", c.folds},
        {"eval_conditioning", c.eval_conditioning},
        {"pfsm_scope", c.pfsm_scope},
    };
}

RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.seed = j.at("seed").get<uint64_t>();
        c.variant = j.at("variant").get<std::string>();
        const auto& d = j.at("dataset");
        c.dataset.n_subjects = d.at("n_subjects").get<int64_t>();
        c.dataset.balance = d.at("balance").get<double>();
        c.dataset.volume = d.at("volume").get<Shape>();
        c.dataset.n_patches = d.at("n_patches").get<int64_t>();
        c.dataset.patch = d.at("patch").get<int64_t>();
        c.dataset.shift = d.at("shift").get<double>();
        const auto& m = j.at("model");
        c.model.backbone = m.at("backbone").get<std::string>();
        c.model.feature_dim = m.at("feature_dim").get<int64_t>();
        c.model.base_channels = m.at("base_channels").get<int64_t>();
        c.model.bn_momentum = m.at("bn_momentum").get<double>();
        c.model.voi = m.at("voi").get<Shape>();
        c.model.disc_hidden = m.at("disc_hidden").get<int64_t>();
        c.model.vit_d_model = m.at("vit_d_model").get<int64_t>();
        c.model.vit_heads = m.at("vit_heads").get<int64_t>();
        c.model.vit_d_k = m.at("vit_d_k").get<int64_t>();
        c.model.vit_blocks = m.at("vit_blocks").get<int64_t>();
        c.model.vit_subpatch = m.at("vit_subpatch").get<int64_t>();
        c.model.vit_volume_subpatch = m.at("vit_volume_subpatch").get<int64_t>();
        c.model.vit_mlp_ratio = m.at("vit_mlp_ratio").get<int64_t>();
        c.model.vit_pos_embedding = m.at("vit_pos_embedding").get<bool>();
        const auto& o = j.at("optim");
        c.optim.lr = o.at("lr").get<double>();
        c.optim.beta1 = o.at("beta1").get<double>();
        c.optim.beta2 = o.at("beta2").get<double>();
        c.optim.eps = o.at("eps").get<double>();
        c.optim.epochs_pfe = o.at("epochs_pfe").get<int>();
        c.optim.epochs_sghf = o.at("epochs_sghf").get<int>();
        c.optim.gan_steps = o.at("gan_steps").get<int>();
        c.optim.batch_2d = o.at("batch_2d").get<int>();
        c.optim.batch_3d = o.at("batch_3d").get<int>();
        c.optim.gan_batch = o.at("gan_batch").get<int>();
        c.optim.k_d = o.at("k_d").get<int>();
        c.optim.g_loss_mode = o.at("g_loss_mode").get<std::string>();
        c.lambda_r = j.at("lambda_r").get<double>();
        c.lambda_p = j.at("lambda_p").get<double>();
        c.folds = j.at("folds").get<int>();
        c.eval_conditioning = j.at("eval_conditioning").get<std::string>();
        c.pfsm_scope = j.at("pfsm_scope").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config json: " + std::string(e.what()));
    }
    return c;
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config json: " + std::string(e.what()));
    }
    RunConfig cfg = from_json(j);
    validate(cfg);
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

}  // namespace sghf
