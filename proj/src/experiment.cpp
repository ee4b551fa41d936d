#include "sghf/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sghf/checkpoint.hpp"
#include "sghf/rng.hpp"
#include "sghf/sha256.hpp"

namespace sghf {

namespace {

EncoderConfig volume_encoder_config(const ModelConfig& m) {
    EncoderConfig e;
    e.backbone = m.backbone;
    e.feature_dim = m.feature_dim;
    e.base_channels = m.base_channels;
    e.bn_momentum = m.bn_momentum;
    e.d_model = m.vit_d_model;
    e.heads = m.vit_heads;
    e.d_k = m.vit_d_k;
    e.blocks = m.vit_blocks;
    e.subpatch = m.vit_volume_subpatch;
    e.mlp_ratio = m.vit_mlp_ratio;
    e.pos_embedding = m.vit_pos_embedding;
    return e;
}

AdamConfig adam_from(const OptimSettings& o) {
    return AdamConfig{o.lr, o.beta1, o.beta2, o.eps};
}

uint64_t fold_seed(uint64_t seed, int fold) {
    return rng::mix(rng::mix(seed, rng::hash_str("fold")), static_cast<uint64_t>(fold) + 1);
}

std::string stage_key(const RunConfig& cfg, int fold) {
    RunConfig c = cfg;  // variant and evaluation mode do not enter the stages
    c.variant = "sghf";
    c.eval_conditioning = "neutral";
    return config_hash(c) + ":" + std::to_string(fold);
}

template <class Fn>
auto annotate_fold(int fold, Fn&& fn) {
    const std::string tag = "fold " + std::to_string(fold) + ": ";
    try {
        return fn();
    } catch (const NumericalError& e) {
        throw NumericalError(tag + e.what());
    } catch (const DataError& e) {
        throw DataError(tag + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

PfeConfig make_pfe_config(const RunConfig& cfg) {
    PfeConfig p;
    p.vit.backbone = "vit";
    p.vit.feature_dim = cfg.model.feature_dim;
    p.vit.d_model = cfg.model.vit_d_model;
    p.vit.heads = cfg.model.vit_heads;
    p.vit.d_k = cfg.model.vit_d_k;
    p.vit.blocks = cfg.model.vit_blocks;
    p.vit.subpatch = cfg.model.vit_subpatch;
    p.vit.mlp_ratio = cfg.model.vit_mlp_ratio;
    p.vit.pos_embedding = cfg.model.vit_pos_embedding;
    p.adam = adam_from(cfg.optim);
    p.epochs = cfg.optim.epochs_pfe;
    p.batch = cfg.optim.batch_2d;
    return p;
}

PfsmConfig make_pfsm_config(const RunConfig& cfg) {
    PfsmConfig p;
    p.gen = volume_encoder_config(cfg.model);
    p.voi = cfg.model.voi;
    p.disc_hidden = cfg.model.disc_hidden;
    p.adam_g = adam_from(cfg.optim);
    p.adam_d = adam_from(cfg.optim);
    p.steps = cfg.optim.gan_steps;
    p.k_d = cfg.optim.k_d;
    p.batch = cfg.optim.gan_batch;
    p.g_mode = gan_loss_mode_from_string(cfg.optim.g_loss_mode);
    p.lambda_p = cfg.lambda_p;
    p.true_label_conditioning = cfg.eval_conditioning == "true-label";
    return p;
}

SghfConfig make_sghf_config(const RunConfig& cfg) {
    SghfConfig s;
    s.rfem = volume_encoder_config(cfg.model);
    s.voi = cfg.model.voi;
    s.adam = adam_from(cfg.optim);
    s.epochs = cfg.optim.epochs_sghf;
    s.batch = cfg.optim.batch_3d;
    s.lambda_r = cfg.lambda_r;
    s.neutral_c = 0.5;
    s.true_label_conditioning = cfg.eval_conditioning == "true-label";
    return s;
}

FoldSplit make_split(const Dataset& ds, const RunConfig& cfg) {
    return split_folds(ds.ids(), ds.labels(), cfg.folds, rng::mix(cfg.seed, rng::hash_str("folds")));
}

std::string dataset_fingerprint(const Dataset& ds) {
    Sha256 h;
    for (const auto& s : ds.subjects) h.update(encode_subject_blob(s));
    return h.hex_digest();
}

std::shared_ptr<StageResult> StageCache::get(const std::string& key) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : it->second;
}

void StageCache::put(const std::string& key, std::shared_ptr<StageResult> value) {
    std::lock_guard<std::mutex> lk(mu_);
    map_[key] = std::move(value);
}

namespace {

std::shared_ptr<StageResult> compute_stages(const std::vector<const Subject*>& train,
                                            const VoiMap& vois, const RunConfig& cfg,
                                            uint64_t seed, const std::string& key,
                                            StageCache* cache) {
    if (cache) {
        if (auto hit = cache->get(key)) return hit;
    }
    auto stage = std::make_shared<StageResult>();
    const PfeConfig pfe_cfg = make_pfe_config(cfg);
    stage->pfe = std::make_shared<PfeModel>(
        init_pfe(pfe_cfg, cfg.dataset.patch, seed));
    stage->pfe_log = train_pfe(*stage->pfe, train, pfe_cfg, seed);
    const FeatureCache features = build_feature_cache(train, *stage->pfe);
    stage->pfsm = std::make_shared<PfsmResult>(
        train_pfsm(train, features, vois, make_pfsm_config(cfg), seed));
    if (cache) cache->put(key, stage);
    return stage;
}

FoldArtifacts run_one_fold(const Dataset& ds, const RunConfig& cfg, Variant variant,
                           const FoldSplit& split, const VoiMap& vois, int fold,
                           StageCache* cache, std::shared_ptr<StageResult> global_stage) {
    return annotate_fold(fold, [&]() -> FoldArtifacts {
        FoldArtifacts fa;
        fa.fold = fold;
        const uint64_t seed_f = fold_seed(cfg.seed, fold);
        std::vector<const Subject*> train;
        for (uint64_t id : split.train_ids[static_cast<size_t>(fold)]) {
            train.push_back(&ds.by_id(id));
        }
        const bool needs_stages = variant == Variant::Sghf || variant == Variant::SpfOnly;
        std::shared_ptr<const Generator> gen;
        if (needs_stages) {
            fa.stages = global_stage ? global_stage
                                     : compute_stages(train, vois, cfg, seed_f,
                                                      stage_key(cfg, fold), cache);
            gen = std::shared_ptr<const Generator>(fa.stages->pfsm, &fa.stages->pfsm->gen);
        }
        const SghfConfig scfg = make_sghf_config(cfg);
        fa.model = std::make_shared<SghfModel>(build_model(variant, scfg, gen, seed_f));
        fa.train_log = train_sghf(*fa.model, train, vois, scfg, seed_f);

        fa.test_ids = split.test_ids[static_cast<size_t>(fold)];
        for (uint64_t id : fa.test_ids) {
            const Subject& s = ds.by_id(id);
            fa.scores.push_back(predict(*fa.model, s).p);
            fa.truths.push_back(s.label);
        }
        fa.metrics.fold = fold;
        fa.metrics.counts = confusion_from(fa.scores, fa.truths);
        fa.metrics.acc = accuracy(fa.metrics.counts);
        fa.metrics.f1 = f1(fa.metrics.counts);
        fa.roc = roc_auc(fa.scores, fa.truths);
        fa.metrics.auc = fa.roc.auc;
        return fa;
    });
}

}  // namespace

RunResult run_experiment(const Dataset& ds, const RunConfig& cfg, int jobs, StageCache* cache) {
    validate(cfg);
    const Variant variant = variant_from_string(cfg.variant);
    const FoldSplit split = make_split(ds, cfg);
    const int k = cfg.folds;

    std::vector<const Subject*> all;
    for (const auto& s : ds.subjects) all.push_back(&s);
    const VoiMap vois = preprocess_all(all, cfg.model.voi);

    std::shared_ptr<StageResult> global_stage;
    const bool needs_stages = variant == Variant::Sghf || variant == Variant::SpfOnly;
    if (needs_stages && cfg.pfsm_scope == "global") {
        global_stage = compute_stages(all, vois, cfg, rng::mix(cfg.seed, rng::hash_str("global")),
                                      stage_key(cfg, -1), cache);
    }

    RunResult result;
    result.folds.resize(static_cast<size_t>(k));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(k));
    auto run_fold = [&](int f) {
        try {
            result.folds[static_cast<size_t>(f)] =
                run_one_fold(ds, cfg, variant, split, vois, f, cache, global_stage);
        } catch (...) {
            errors[static_cast<size_t>(f)] = std::current_exception();
        }
    };
    if (jobs > 1) {
#ifdef _OPENMP
        const int threads = std::min(jobs, k);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
        for (int f = 0; f < k; ++f) run_fold(f);
#else
        for (int f = 0; f < k; ++f) run_fold(f);
#endif
    } else {
        for (int f = 0; f < k; ++f) run_fold(f);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    MetricsReport rep;
    rep.variant = cfg.variant;
    rep.backbone = cfg.model.backbone;
    rep.seed = cfg.seed;
    rep.config_hash = config_hash(cfg);
    bool degenerate_f1 = false;
    for (const auto& fa : result.folds) {
        rep.folds.push_back(fa.metrics);
        if (fa.metrics.counts.tp + fa.metrics.counts.fp + fa.metrics.counts.fn == 0) {
            degenerate_f1 = true;
        }
    }
    rep.finalize();
    if (degenerate_f1) rep.notes.push_back("f1 reported as 0 for folds without any positives");
    result.report = std::move(rep);
    return result;
}

namespace {

std::string predictions_csv(const FoldArtifacts& fa) {
    std::ostringstream os;
    os << "id,p,pred,truth\n";
    char line[96];
    for (size_t i = 0; i < fa.test_ids.size(); ++i) {
        std::snprintf(line, sizeof(line), "%llu,%.17g,%d,%d\n",
                      static_cast<unsigned long long>(fa.test_ids[i]), fa.scores[i],
                      fa.scores[i] >= 0.5 ? 1 : 0, fa.truths[i]);
        os << line;
    }
    return os.str();
}

std::string roc_csv(const RocResult& roc) {
    std::ostringstream os;
    os << "fpr,tpr,threshold\n";
    char line[96];
    for (const auto& p : roc.points) {
        std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
        os << line;
    }
    return os.str();
}

}  // namespace

void write_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const Dataset& ds,
                   const RunResult& run) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create run directory " + dir.string());
    write_text(dir / "config.json", config_to_json(cfg));
    nlohmann::json meta{{"format", "sghf-run-v1"},
                        {"config_hash", config_hash(cfg)},
                        {"dataset_hash", dataset_fingerprint(ds)},
                        {"variant", cfg.variant}};
    write_text(dir / "run_meta.json", meta.dump(2) + "\n");
    write_text(dir / "report.json", report_to_json(run.report));
    write_text(dir / "report.csv", report_to_csv(run.report));
    for (const auto& fa : run.folds) {
        const auto fdir = dir / ("fold" + std::to_string(fa.fold));
        std::filesystem::create_directories(fdir, ec);
        if (ec) throw DataError("cannot create fold directory " + fdir.string());
        save_params(fa.model->params, fdir / "model.json",
                    "sghf-model:" + to_string(fa.model->variant));
        write_text(fdir / "train_log.csv", epoch_log_to_csv(fa.train_log));
        write_text(fdir / "predictions.csv", predictions_csv(fa));
        write_text(fdir / "roc.csv", roc_csv(fa.roc));
        if (fa.stages) {
            save_params(fa.stages->pfe->params, fdir / "pfe.json", "pfe");
            write_text(fdir / "pfe_log.csv", epoch_log_to_csv(fa.stages->pfe_log));
            save_params(fa.stages->pfsm->gen.params, fdir / "pfsm_g.json", "pfsm-g");
            save_params(fa.stages->pfsm->disc.params, fdir / "pfsm_d.json", "pfsm-d");
            write_text(fdir / "gan_log.csv", gan_log_to_csv(fa.stages->pfsm->log));
        }
    }
}

namespace {

MetricsReport evaluate_models(const std::vector<std::shared_ptr<SghfModel>>& models,
                              const RunConfig& cfg, const Dataset& eval_ds, bool respect,
                              const FoldSplit* split) {
    MetricsReport rep;
    rep.variant = cfg.variant;
    rep.backbone = cfg.model.backbone;
    rep.seed = cfg.seed;
    rep.config_hash = config_hash(cfg);
    for (size_t f = 0; f < models.size(); ++f) {
        std::vector<uint64_t> ids;
        if (respect) {
            ids = split->test_ids[f];
        } else {
            ids = eval_ds.ids();
        }
        std::vector<double> scores;
        std::vector<int> truths;
        for (uint64_t id : ids) {
            const Subject& s = eval_ds.by_id(id);
            scores.push_back(predict(*models[f], s).p);
            truths.push_back(s.label);
        }
        FoldMetrics m;
        m.fold = static_cast<int>(f);
        m.counts = confusion_from(scores, truths);
        m.acc = accuracy(m.counts);
        m.f1 = f1(m.counts);
        m.auc = roc_auc(scores, truths).auc;
        rep.folds.push_back(m);
    }
    rep.finalize();
    rep.notes.push_back(respect ? "evaluation-only over per-fold held-out subjects"
                                : "evaluation-only over the full foreign dataset");
    return rep;
}

}  // namespace

MetricsReport evaluate_run(const RunResult& run, const RunConfig& cfg, const Dataset& train_ds,
                           const Dataset& eval_ds, std::optional<bool> respect_folds) {
    const bool respect = respect_folds.has_value()
                             ? *respect_folds
                             : dataset_fingerprint(eval_ds) == dataset_fingerprint(train_ds);
    FoldSplit split;
    if (respect) split = make_split(eval_ds, cfg);
    std::vector<std::shared_ptr<SghfModel>> models;
    for (const auto& fa : run.folds) models.push_back(fa.model);
    return evaluate_models(models, cfg, eval_ds, respect, &split);
}

MetricsReport external_validate_run(const std::filesystem::path& run_dir, const Dataset& eval_ds,
                                    std::optional<bool> respect_folds) {
    const RunConfig cfg = config_from_json(read_text(run_dir / "config.json"));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text(run_dir / "run_meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad run metadata: " + std::string(e.what()));
    }
    if (meta.value("format", "") != "sghf-run-v1") throw DataError("unknown run format");
    const Variant variant = variant_from_string(cfg.variant);
    const bool needs_stages = variant == Variant::Sghf || variant == Variant::SpfOnly;

    const bool respect = respect_folds.has_value()
                             ? *respect_folds
                             : dataset_fingerprint(eval_ds) ==
                                   meta.at("dataset_hash").get<std::string>();

    std::vector<std::shared_ptr<SghfModel>> models;
    const SghfConfig scfg = make_sghf_config(cfg);
    for (int f = 0; f < cfg.folds; ++f) {
        const auto fdir = run_dir / ("fold" + std::to_string(f));
        if (!std::filesystem::exists(fdir / "model.json")) {
            throw DataError("incomplete run: missing " + (fdir / "model.json").string());
        }
        const uint64_t seed_f = fold_seed(cfg.seed, f);
        std::shared_ptr<const Generator> gen;
        if (needs_stages) {
            auto g = std::make_shared<Generator>(init_generator(make_pfsm_config(cfg), seed_f));
            load_params(g->params, fdir / "pfsm_g.json", "pfsm-g");
            gen = g;
        }
        auto model = std::make_shared<SghfModel>(build_model(variant, scfg, gen, seed_f));
        load_params(model->params, fdir / "model.json", "sghf-model:" + cfg.variant);
        models.push_back(std::move(model));
    }
    FoldSplit split;
    if (respect) split = make_split(eval_ds, cfg);
    return evaluate_models(models, cfg, eval_ds, respect, &split);
}

// ------------------------------------------------------------- reporting

std::string comparison_table_markdown(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    if (rows.empty()) throw DataError("comparison table: no reports");
    double best[3] = {-1, -1, -1};
    for (const auto& [name, r] : rows) {
        best[0] = std::max(best[0], r.acc.mean);
        best[1] = std::max(best[1], r.auc.mean);
        best[2] = std::max(best[2], r.f1.mean);
    }
    std::ostringstream os;
    os << "| run | ACC | AUC | F1 |\n|---|---|---|---|\n";
    for (const auto& [name, r] : rows) {
        const Aggregate* agg[3] = {&r.acc, &r.auc, &r.f1};
        os << "| " << name << " |";
        for (int i = 0; i < 3; ++i) {
            const std::string cell = format_mean_std(*agg[i]);
            if (agg[i]->mean == best[i]) {
                os << " **" << cell << "** |";
            } else {
                os << " " << cell << " |";
            }
        }
        os << "\n";
    }
    return os.str();
}

std::string comparison_table_csv(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    if (rows.empty()) throw DataError("comparison table: no reports");
    std::ostringstream os;
    os << "run,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std\n";
    char line[256];
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", name.c_str(),
                      r.acc.mean, r.acc.stddev, r.auc.mean, r.auc.stddev, r.f1.mean, r.f1.stddev);
        os << line;
    }
    return os.str();
}

}  // namespace sghf
