#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mstl/error.hpp"

namespace mstl {

struct ConfusionMatrix {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t tn = 0;
    int64_t fn = 0;
    int64_t total() const { return tp + fp + tn + fn; }
};

// Zero-denominator metrics report 0 with the matching flag set instead of
// NaN, so reports stay machine-comparable.
struct MetricFlags {
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    MetricFlags flags;
};

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct Provenance {
    std::string checkpoint_hash;
    std::string manifest_hash;
    uint64_t seed = 0;
};

struct EvalReport {
    std::string model_id;
    std::string stage;
    std::string split;
    double threshold = 0.5;
    ConfusionMatrix cm;
    Metrics metrics;
    std::vector<RocPoint> roc; // (0,0) .. (1,1)
    double auc = 0.0;
    Provenance provenance;
};

// Predict positive iff score >= threshold. Positive class is label 1.
ConfusionMatrix confusion(const std::vector<float>& scores, const std::vector<int>& labels,
                          float threshold);

Metrics metrics_of(const ConfusionMatrix& cm);

// Threshold sweep over distinct scores descending, ties grouped; AUC by the
// trapezoidal rule. Both classes must be present.
std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<float>& scores,
                                                 const std::vector<int>& labels);

EvalReport evaluate_binary(const std::string& model_id, const std::string& stage,
                           const std::string& split, const std::vector<float>& scores,
                           const std::vector<int>& labels, float threshold,
                           const Provenance& provenance);

struct ComparisonRow {
    std::string metric;
    double baseline = 0.0;
    double candidate = 0.0;
    double delta = 0.0; // candidate - baseline
};

struct ComparisonTable {
    std::string baseline_id;
    std::string candidate_id;
    std::string split;
    std::vector<ComparisonRow> rows;
};

// Per-metric deltas against the baseline. Reports must share split and
// manifest hash, otherwise the comparison is rejected.
ComparisonTable compare_arms(const EvalReport& baseline, const EvalReport& candidate);

// Structured report: schema "mstl-eval-report/1", stable key order.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);
void write_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

// Fixed-point (three decimals) plain-text renderings.
std::string render_table(const std::vector<EvalReport>& reports);
std::string render_comparison(const ComparisonTable& table);

// Self-contained SVG overlaying one ROC polyline per report, AUC in the
// legend. No external renderer needed.
std::string render_roc_svg(const std::vector<EvalReport>& reports);

void write_text_file(const std::string& path, const std::string& content);

} // namespace mstl
