#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "sghf/config.hpp"
#include "sghf/metrics.hpp"
#include "sghf/sghf_model.hpp"

namespace sghf {

// Sub-configurations derived from a run configuration.
PfeConfig make_pfe_config(const RunConfig& cfg);
PfsmConfig make_pfsm_config(const RunConfig& cfg);
SghfConfig make_sghf_config(const RunConfig& cfg);

// The canonical fold split for a run (depends on the dataset and the seed).
FoldSplit make_split(const Dataset& ds, const RunConfig& cfg);

// Content fingerprint of an in-memory dataset; equals the hash written by
// save_dataset.
std::string dataset_fingerprint(const Dataset& ds);

// Pathology-side stages shared between variants of one (config, fold).
struct StageResult {
    std::shared_ptr<PfeModel> pfe;
    std::shared_ptr<PfsmResult> pfsm;
    std::vector<EpochLog> pfe_log;
};

// Thread-safe memo for stage results; training is deterministic, so a hit
// returns bitwise the same parameters a fresh run would produce.
class StageCache {
public:
    std::shared_ptr<StageResult> get(const std::string& key);
    void put(const std::string& key, std::shared_ptr<StageResult> value);

private:
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<StageResult>> map_;
};

struct FoldArtifacts {
    int fold = 0;
    std::shared_ptr<StageResult> stages;  // null for pure radiology variants
    std::shared_ptr<SghfModel> model;
    std::vector<EpochLog> train_log;
    std::vector<uint64_t> test_ids;
    std::vector<double> scores;
    std::vector<int> truths;
    FoldMetrics metrics;
    RocResult roc;
};

struct RunResult {
    MetricsReport report;
    std::vector<FoldArtifacts> folds;
};

// Per fold: train the pathology stages when the variant consumes them,
// train the classifier, evaluate the held-out subjects. jobs > 1 runs
// folds concurrently; results are identical for any job count.
RunResult run_experiment(const Dataset& ds, const RunConfig& cfg, int jobs = 1,
                         StageCache* cache = nullptr);

// Writes config copy, metadata, per-fold checkpoints/logs and the report.
void write_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const Dataset& ds,
                   const RunResult& run);

// Evaluation-only pass of an existing run's fold models over a dataset.
// respect_folds limits each fold model to its own held-out subjects; by
// default that mode is chosen exactly when the dataset is the one the run
// was trained on.
MetricsReport evaluate_run(const RunResult& run, const RunConfig& cfg, const Dataset& train_ds,
                           const Dataset& eval_ds, std::optional<bool> respect_folds = {});

// Same, but reloading the run from disk (CLI path).
MetricsReport external_validate_run(const std::filesystem::path& run_dir, const Dataset& eval_ds,
                                    std::optional<bool> respect_folds = {});

// Markdown comparison table over named reports; the best value of each
// metric column is flagged.
std::string comparison_table_markdown(
    const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string comparison_table_csv(
    const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace sghf
