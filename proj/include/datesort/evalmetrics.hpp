#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "datesort/types.hpp"

namespace datesort {

// Row-major square count matrix; rows index the true class, columns the
// predicted class.
struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<long long> counts;  // n_classes * n_classes entries

    long long at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * n_classes + pred]; }
    long long& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * n_classes + pred]; }
    long long total() const;
    long long trace() const;
};

// One-vs-rest rates for a single class (or an unweighted average of them).
struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double specificity = 0.0;
};

// Per-class and aggregate rates derived from a confusion matrix.  Macro
// values are unweighted class means; micro values pool one-vs-rest counts
// before dividing (for single-label problems they all equal accuracy).
// Zero-denominator rates are reported as 0 so reports stay machine-readable.
struct ClassMetricsReport {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro;
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
};

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// Threshold sweep over descending distinct scores.  Tied scores collapse
// into a single step, the leading (0,0) point is always present, and the
// final point is (1,1).  The area is the trapezoidal integral over the
// points, which equals the Mann-Whitney pair-counting statistic.
struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

// Same descending sweep as RocCurve, truncated at the first threshold that
// reaches full recall: later thresholds add no recall and only dilute
// precision, so a perfectly separating scorer keeps precision 1 everywhere.
struct PrCurve {
    std::vector<PrPoint> points;
};

// One-vs-rest curve bundle for a single class.  `defined` is false when the
// evaluated split lacks positives or negatives for the class (the curve is
// then empty and excluded from macro AUC).
struct ClassCurves {
    bool defined = false;
    RocCurve roc;
    PrCurve pr;
};

// Full report for one classification task (8-way variety or binary
// spoilage).  Curves are present only when scores were supplied.
struct ClassificationReport {
    ConfusionMatrix cm;
    ClassMetricsReport metrics;
    std::vector<ClassCurves> curves;  // empty, or one entry per class
    double macro_auc = 0.0;           // mean AUC over defined curves, else 0
};

// Everything the evaluation of one split produces: both classification
// tasks plus the shelf-life regression error in days.
struct MetricsReport {
    long long count = 0;
    ClassificationReport variety;
    ClassificationReport spoilage;
    double shelf_life_mae = 0.0;
};

// Per-sample ground truth and model outputs collected over a split.  Score
// vectors may be left empty, in which case the report omits curves.
struct EvalInputs {
    std::vector<int> variety_truth;
    std::vector<int> variety_pred;
    std::vector<std::array<double, kNumVarieties>> variety_scores;
    std::vector<int> spoilage_truth;
    std::vector<int> spoilage_pred;
    std::vector<double> spoilage_scores;
    std::vector<double> shelf_truth_days;
    std::vector<double> shelf_pred_days;
};

// Tallies labels into an n_classes x n_classes matrix.  Throws on empty
// input or out-of-range labels.
ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes);

// Derives accuracy plus per-class / macro / micro rates from a matrix.
ClassMetricsReport class_metrics(const ConfusionMatrix& cm);

// Binary curve builders.  Labels must be 0/1; roc_curve requires both
// classes, pr_curve requires at least one positive.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Builds one task's report.  `scores` is either empty or one row per sample
// with n_classes entries (row = per-class scores, e.g. softmax outputs).
ClassificationReport build_classification_report(const std::vector<int>& truth,
                                                 const std::vector<int>& predicted,
                                                 const std::vector<std::vector<double>>& scores,
                                                 int n_classes);

// Builds the full report from collected per-sample outputs.
MetricsReport build_report(const EvalInputs& inputs);

// Serializes the report to its JSON document (layout "dsreport1").
std::string report_to_json(const MetricsReport& report);

// Writes report.json plus confusion/ROC/PR CSV files into `dir` (created if
// missing).  Variety curve files are named after the variety; spoilage files
// use the "spoiled" class.
void write_report_files(const std::filesystem::path& dir, const MetricsReport& report);

}  // namespace datesort
