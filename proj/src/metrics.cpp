#include "sghf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace sghf {

ConfusionCounts confusion_from(const std::vector<double>& scores, const std::vector<int>& labels,
                               double threshold) {
    if (scores.size() != labels.size()) throw ShapeError("confusion: length mismatch");
    ConfusionCounts c;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] == 1;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw DataError("accuracy: empty counts");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double f1(const ConfusionCounts& c) {
    const int64_t denom2 = 2 * c.tp + c.fp + c.fn;
    if (denom2 == 0) return 0.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom2);
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
    const size_t n = scores.size();
    int64_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("roc_auc: undefined, needs both classes present");
    }

    // Average ranks over tie groups; rank sum of positives gives the
    // Mann-Whitney statistic.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    RocResult res;
    res.auc = (rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));

    // ROC points at every distinct threshold, descending.
    res.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    int64_t tp = 0, fp = 0;
    for (size_t k = n; k > 0;) {
        size_t j = k;
        const double thr = scores[order[k - 1]];
        while (k > 0 && scores[order[k - 1]] == thr) {
            if (labels[order[k - 1]] == 1) ++tp;
            else ++fp;
            --k;
        }
        (void)j;
        res.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                              static_cast<double>(tp) / static_cast<double>(n_pos), thr});
    }
    return res;
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / (static_cast<double>(values.size()) - 1.0));
    }
    return a;
}

void MetricsReport::finalize() {
    std::vector<double> accs, aucs, f1s;
    for (const auto& f : folds) {
        accs.push_back(f.acc);
        aucs.push_back(f.auc);
        f1s.push_back(f.f1);
    }
    acc = aggregate(accs);
    auc = aggregate(aucs);
    f1 = aggregate(f1s);
}

namespace {

nlohmann::json agg_json(const Aggregate& a) {
    return {{"mean", a.mean}, {"std", a.stddev}};
}

Aggregate agg_from(const nlohmann::json& j) {
    return Aggregate{j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"acc", f.acc},
                         {"auc", f.auc},
                         {"f1", f.f1},
                         {"tp", f.counts.tp},
                         {"tn", f.counts.tn},
                         {"fp", f.counts.fp},
                         {"fn", f.counts.fn}});
    }
    nlohmann::json j{{"format", "sghf-report-v1"},
                     {"variant", r.variant},
                     {"backbone", r.backbone},
                     {"seed", r.seed},
                     {"config_hash", r.config_hash},
                     {"folds", folds},
                     {"aggregate",
                      {{"acc", agg_json(r.acc)}, {"auc", agg_json(r.auc)}, {"f1", agg_json(r.f1)}}},
                     {"notes", r.notes}};
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad report json: " + std::string(e.what()));
    }
    if (j.value("format", "") != "sghf-report-v1") throw DataError("unknown report format");
    MetricsReport r;
    r.variant = j.at("variant").get<std::string>();
    r.backbone = j.at("backbone").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& f : j.at("folds")) {
        FoldMetrics m;
        m.fold = f.at("fold").get<int>();
        m.acc = f.at("acc").get<double>();
        m.auc = f.at("auc").get<double>();
        m.f1 = f.at("f1").get<double>();
        m.counts.tp = f.at("tp").get<int64_t>();
        m.counts.tn = f.at("tn").get<int64_t>();
        m.counts.fp = f.at("fp").get<int64_t>();
        m.counts.fn = f.at("fn").get<int64_t>();
        r.folds.push_back(m);
    }
    r.acc = agg_from(j.at("aggregate").at("acc"));
    r.auc = agg_from(j.at("aggregate").at("auc"));
    r.f1 = agg_from(j.at("aggregate").at("f1"));
    for (const auto& note : j.at("notes")) r.notes.push_back(note.get<std::string>());
    return r;
}

std::string report_to_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "fold,acc,auc,f1,tp,tn,fp,fn\n";
    char line[160];
    for (const auto& f : r.folds) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%lld,%lld,%lld,%lld\n", f.fold,
                      f.acc, f.auc, f.f1, static_cast<long long>(f.counts.tp),
                      static_cast<long long>(f.counts.tn), static_cast<long long>(f.counts.fp),
                      static_cast<long long>(f.counts.fn));
        os << line;
    }
    std::snprintf(line, sizeof(line), "mean,%.17g,%.17g,%.17g,,,,\n", r.acc.mean, r.auc.mean,
                  r.f1.mean);
    os << line;
    std::snprintf(line, sizeof(line), "std,%.17g,%.17g,%.17g,,,,\n", r.acc.stddev, r.auc.stddev,
                  r.f1.stddev);
    os << line;
    return os.str();
}

std::string format_mean_std(const Aggregate& a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f±%.2f", a.mean * 100.0, a.stddev * 100.0);
    return buf;
}

}  // namespace sghf
