#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sghf/experiment.hpp"

using namespace sghf;
namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

void write_text_file(const fs::path& p, const std::string& text) {
    if (!p.parent_path().empty()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Dataset generate_from_config(const RunConfig& cfg) {
    SubjectShapes shapes;
    shapes.volume = cfg.dataset.volume;
    shapes.n_patches = cfg.dataset.n_patches;
    shapes.patch = cfg.dataset.patch;
    return generate_dataset(cfg.seed, cfg.dataset.n_subjects, cfg.dataset.balance, shapes,
                            cfg.dataset.shift);
}

int cmd_init(const std::string& preset, const std::string& out) {
    RunConfig cfg = config_by_preset(preset);
    validate(cfg);
    write_text_file(out, config_to_json(cfg));
    std::printf("wrote %s (preset %s, hash %s)\n", out.c_str(), preset.c_str(),
                config_hash(cfg).substr(0, 12).c_str());
    return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out, bool has_seed,
                 uint64_t seed, bool has_shift, double shift) {
    RunConfig cfg = load_config_file(config_path);
    if (has_seed) cfg.seed = seed;
    if (has_shift) cfg.dataset.shift = shift;
    validate(cfg);
    Dataset ds = generate_from_config(cfg);
    save_dataset(ds, out);
    int per_class[2] = {0, 0};
    for (const auto& s : ds.subjects) per_class[s.label]++;
    std::printf("wrote %zu subjects to %s (class 0: %d, class 1: %d, shift %.3g)\n",
                ds.subjects.size(), out.c_str(), per_class[0], per_class[1], cfg.dataset.shift);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& variant, int jobs) {
    RunConfig cfg = load_config_file(config_path);
    if (!variant.empty()) cfg.variant = variant;
    validate(cfg);
    Dataset ds = load_dataset(data);
    RunResult run = run_experiment(ds, cfg, jobs);
    write_run_dir(out, cfg, ds, run);
    std::printf("variant %s: ACC %s  AUC %s  F1 %s\n", cfg.variant.c_str(),
                format_mean_std(run.report.acc).c_str(), format_mean_std(run.report.auc).c_str(),
                format_mean_std(run.report.f1).c_str());
    std::printf("run written to %s\n", out.c_str());
    return 0;
}

int cmd_validate(const std::string& run_dir, const std::string& data, const std::string& out,
                 int respect_mode) {
    Dataset ds = load_dataset(data);
    std::optional<bool> respect;
    if (respect_mode == 1) respect = true;
    if (respect_mode == 2) respect = false;
    MetricsReport rep = external_validate_run(run_dir, ds, respect);
    const std::string text = report_to_json(rep);
    if (!out.empty()) {
        write_text_file(out, text);
        std::printf("report written to %s\n", out.c_str());
    }
    std::printf("ACC %s  AUC %s  F1 %s\n", format_mean_std(rep.acc).c_str(),
                format_mean_std(rep.auc).c_str(), format_mean_std(rep.f1).c_str());
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data, const std::string& out,
               int jobs) {
    RunConfig cfg = load_config_file(config_path);
    Dataset ds = load_dataset(data);
    StageCache cache;
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const std::string v : {"benchmark-rf", "sghf", "spf-only", "double-rf"}) {
        RunConfig vcfg = cfg;
        vcfg.variant = v;
        validate(vcfg);
        RunResult run = run_experiment(ds, vcfg, jobs, &cache);
        write_run_dir(fs::path(out) / v, vcfg, ds, run);
        rows.emplace_back(v, run.report);
        std::printf("%-13s ACC %s  AUC %s  F1 %s\n", v.c_str(),
                    format_mean_std(run.report.acc).c_str(),
                    format_mean_std(run.report.auc).c_str(),
                    format_mean_std(run.report.f1).c_str());
    }
    write_text_file(fs::path(out) / "ablation_report.md", comparison_table_markdown(rows));
    write_text_file(fs::path(out) / "ablation_report.csv", comparison_table_csv(rows));
    std::printf("ablation table written to %s\n", (fs::path(out) / "ablation_report.md").c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& dir : runs) {
        const fs::path report = fs::path(dir) / "report.json";
        if (!fs::exists(report)) {
            throw DataError("missing metrics file: " + report.string());
        }
        MetricsReport rep = report_from_json(read_text_file(report));
        rows.emplace_back(fs::path(dir).filename().string() + " (" + rep.variant + ")", rep);
    }
    const std::string table = comparison_table_markdown(rows);
    std::fputs(table.c_str(), stdout);
    if (!out.empty()) {
        write_text_file(out, table);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid-feature classifier pipeline: synthetic paired-modality data, "
                 "adversarial feature synthesis, fused classification, evaluation"};
    app.require_subcommand(1);

    std::string preset = "desk", out, config_path, data, run_dir, variant;
    uint64_t seed = 0;
    double shift = 0;
    int jobs = 1;
    int respect_mode = 0;
    std::vector<std::string> run_dirs;

    auto* init = app.add_subcommand("init", "write a configuration template");
    init->add_option("--preset", preset, "desk | paper-scale | acceptance-small");
    std::string init_out = "config.json";
    init->add_option("--out", init_out, "output path");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen->add_option("--config", config_path, "run configuration")->required();
    gen->add_option("--out", out, "dataset directory")->required();
    auto* seed_opt = gen->add_option("--seed", seed, "override the config seed");
    auto* shift_opt = gen->add_option("--shift", shift, "override the acquisition shift");

    auto* train = app.add_subcommand("train", "cross-validated training run");
    train->add_option("--config", config_path, "run configuration")->required();
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--out", out, "run directory")->required();
    train->add_option("--variant", variant, "sghf | benchmark-rf | spf-only | double-rf");
    train->add_option("--jobs", jobs, "parallel folds");

    auto* eval = app.add_subcommand("eval", "re-evaluate a finished run on a dataset");
    eval->add_option("--run", run_dir, "run directory")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--out", out, "write the report JSON here");

    auto* ext = app.add_subcommand("external-validate",
                                   "evaluate fold models on a foreign dataset");
    ext->add_option("--run", run_dir, "run directory")->required();
    ext->add_option("--data", data, "dataset directory")->required();
    ext->add_option("--out", out, "write the report JSON here");
    ext->add_flag_callback("--respect-folds", [&] { respect_mode = 1; },
                           "restrict each fold model to its held-out subjects");
    ext->add_flag_callback("--full", [&] { respect_mode = 2; },
                           "evaluate every fold model on the entire dataset");

    auto* ablate = app.add_subcommand("ablate", "run the benchmark/sghf/spf-only/double-rf suite");
    ablate->add_option("--config", config_path, "run configuration")->required();
    ablate->add_option("--data", data, "dataset directory")->required();
    ablate->add_option("--out", out, "output directory")->required();
    ablate->add_option("--jobs", jobs, "parallel folds");

    auto* report = app.add_subcommand("report", "comparison table over finished runs");
    report->add_option("runs", run_dirs, "run directories")->required();
    report->add_option("--out", out, "write the markdown table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (init->parsed()) return cmd_init(preset, init_out);
        if (gen->parsed()) {
            return cmd_gen_data(config_path, out, seed_opt->count() > 0, seed,
                                shift_opt->count() > 0, shift);
        }
        if (train->parsed()) return cmd_train(config_path, data, out, variant, jobs);
        if (eval->parsed()) return cmd_validate(run_dir, data, out, /*respect auto*/ 0);
        if (ext->parsed()) return cmd_validate(run_dir, data, out, respect_mode);
        if (ablate->parsed()) return cmd_ablate(config_path, data, out, jobs);
        if (report->parsed()) return cmd_report(run_dirs, out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return kExitNumerical;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    }
    return 0;
}
