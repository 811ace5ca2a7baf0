#pragma once

#include <cstddef>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

namespace mmfuse::metrics {

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Labels and predictions must be 0/1 and of equal, nonzero length.
ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions);

/// Predicts positive when score >= threshold.
ConfusionMatrix confusion_at(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5);

// Bits set in MetricSet::degenerate when a ratio had a zero denominator.
enum DegenerateFlag : unsigned {
    kPrecisionUndefined = 1u << 0,
    kRecallUndefined = 1u << 1,
    kSpecificityUndefined = 1u << 2,
    kF1Undefined = 1u << 3,
};

struct MetricSet {
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    unsigned degenerate = 0;
};

/// Undefined ratios are reported as 0 and flagged.
MetricSet summary_metrics(const ConfusionMatrix& cm);

/// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double precision, double recall);

struct RocPoint {
    double fpr;
    double tpr;
    double threshold;
};

struct RocCurve {
    std::vector<RocPoint> points;  // starts at (0, 0) with threshold +inf
    double auc = 0.0;
    bool auc_defined = false;      // false when only one class is present
};

/// One point per distinct score (descending); AUC by the trapezoid rule.
RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores);

struct PrPoint {
    double recall;
    double precision;
    double threshold;
};

struct PrCurve {
    std::vector<PrPoint> points;  // thresholds descending, recall nondecreasing
    double average_precision = 0.0;
    bool defined = false;         // false when there are no positives
};

/// Average precision is sum over thresholds of (R_k - R_{k-1}) * P_k.
PrCurve pr_curve(std::span<const int> labels, std::span<const double> scores);

struct EvalReport {
    ConfusionMatrix confusion;
    MetricSet metrics;
    double threshold = 0.5;
    RocCurve roc;
    PrCurve pr;
};

EvalReport evaluate(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Two-column "Metric | Value" table in the style of a test-set summary.
std::string render_metric_table(const EvalReport& report, std::string_view title);

/// Model rows with Balanced Accuracy, F1 Score, Precision, Recall columns.
struct ComparisonRow {
    std::string model;
    MetricSet metrics;
};
std::string render_comparison_table(std::span<const ComparisonRow> rows, std::string_view title);

/// Curve samples as delimited text for external plotting.
std::string roc_csv(const RocCurve& curve);
std::string pr_csv(const PrCurve& curve);

}  // namespace mmfuse::metrics
