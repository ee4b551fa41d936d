#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sghf/errors.hpp"

namespace sghf {

struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    int64_t total() const { return tp + tn + fp + fn; }
};

// Threshold at 0.5; a score exactly on the threshold predicts positive.
ConfusionCounts confusion_from(const std::vector<double>& scores, const std::vector<int>& labels,
                               double threshold = 0.5);

double accuracy(const ConfusionCounts& c);

// tp / (tp + (fp+fn)/2); defined as 0 when tp+fp+fn == 0.
double f1(const ConfusionCounts& c);

struct RocPoint {
    double fpr = 0, tpr = 0, threshold = 0;
};

struct RocResult {
    double auc = 0;
    std::vector<RocPoint> points;  // one per distinct threshold, plus (0,0)
};

// Rank-statistic AUC: P(score_pos > score_neg) + P(tie)/2, computed from
// average ranks so ties are exact. Throws DataError when only one class
// is present. ROC points are emitted for plotting only.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Aggregate {
    double mean = 0;
    double stddev = 0;  // sample standard deviation (n-1)
};
Aggregate aggregate(const std::vector<double>& values);

struct FoldMetrics {
    int fold = 0;
    double acc = 0, auc = 0, f1 = 0;
    ConfusionCounts counts;
};

struct MetricsReport {
    std::string variant;
    std::string backbone;
    uint64_t seed = 0;
    std::string config_hash;
    std::vector<FoldMetrics> folds;
    Aggregate acc, auc, f1;
    std::vector<std::string> notes;

    // Recomputes the aggregates from the per-fold rows.
    void finalize();
};

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);
std::string report_to_csv(const MetricsReport& r);

// "87.68±6.81"-style cell: values scaled to percent, two decimals.
std::string format_mean_std(const Aggregate& a);

}  // namespace sghf
