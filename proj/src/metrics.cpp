#include "mmfuse/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"

namespace mmfuse::metrics {
namespace {

void check_binary(std::span<const int> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0 && v[i] != 1) throw ValidationError(fmt::format("{}[{}] = {} is not binary", what, i, v[i]));
}

void check_scored(std::span<const int> labels, std::span<const double> scores) {
    if (labels.empty()) throw ValidationError("metrics: empty input");
    if (labels.size() != scores.size())
        throw ValidationError(fmt::format("metrics: {} labels vs {} scores", labels.size(), scores.size()));
    check_binary(labels, "labels");
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (std::isnan(scores[i])) throw ValidationError(fmt::format("metrics: score[{}] is NaN", i));
}

double ratio(std::size_t num, std::size_t den, unsigned flag, unsigned& flags) {
    if (den == 0) {
        flags |= flag;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

// Sample order by descending score, ties by index.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.empty()) throw ValidationError("confusion: empty input");
    if (labels.size() != predictions.size())
        throw ValidationError(fmt::format("confusion: {} labels vs {} predictions", labels.size(), predictions.size()));
    check_binary(labels, "labels");
    check_binary(predictions, "predictions");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1)
            (predictions[i] == 1 ? cm.tp : cm.fn)++;
        else
            (predictions[i] == 1 ? cm.fp : cm.tn)++;
    }
    return cm;
}

ConfusionMatrix confusion_at(std::span<const int> labels, std::span<const double> scores, double threshold) {
    check_scored(labels, scores);
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
    return confusion(labels, pred);
}

double f1_score(double precision, double recall) {
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

MetricSet summary_metrics(const ConfusionMatrix& cm) {
    MetricSet m;
    unsigned flags = 0;
    unsigned unused = 0;
    m.precision = ratio(cm.tp, cm.tp + cm.fp, kPrecisionUndefined, flags);
    m.recall = ratio(cm.tp, cm.tp + cm.fn, kRecallUndefined, flags);
    m.specificity = ratio(cm.tn, cm.tn + cm.fp, kSpecificityUndefined, flags);
    m.accuracy = ratio(cm.tp + cm.tn, cm.total(), 0, unused);
    m.balanced_accuracy = 0.5 * (m.recall + m.specificity);
    if (m.precision + m.recall == 0.0) flags |= kF1Undefined;
    m.f1 = f1_score(m.precision, m.recall);
    m.degenerate = flags;
    return m;
}

RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores) {
    check_scored(labels, scores);
    const auto order = descending_order(scores);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t neg = labels.size() - pos;

    RocCurve curve;
    curve.auc_defined = pos > 0 && neg > 0;
    const double p = pos ? static_cast<double>(pos) : 1.0;
    const double n = neg ? static_cast<double>(neg) : 1.0;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});

    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t i = order[k];
        (labels[i] == 1 ? tp : fp)++;
        if (k + 1 < order.size() && scores[order[k + 1]] == scores[i]) continue;
        curve.points.push_back({static_cast<double>(fp) / n, static_cast<double>(tp) / p, scores[i]});
    }
    if (curve.auc_defined) {
        double auc = 0.0;
        for (std::size_t k = 1; k < curve.points.size(); ++k) {
            const auto& a = curve.points[k - 1];
            const auto& b = curve.points[k];
            auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
        }
        curve.auc = auc;
    }
    return curve;
}

PrCurve pr_curve(std::span<const int> labels, std::span<const double> scores) {
    check_scored(labels, scores);
    const auto order = descending_order(scores);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));

    PrCurve curve;
    curve.defined = pos > 0;
    const double p = pos ? static_cast<double>(pos) : 1.0;
    std::size_t tp = 0, fp = 0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t i = order[k];
        (labels[i] == 1 ? tp : fp)++;
        if (k + 1 < order.size() && scores[order[k + 1]] == scores[i]) continue;
        const double recall = static_cast<double>(tp) / p;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        curve.points.push_back({recall, precision, scores[i]});
        curve.average_precision += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    if (!curve.defined) curve.average_precision = 0.0;
    return curve;
}

EvalReport evaluate(std::span<const int> labels, std::span<const double> scores, double threshold) {
    EvalReport r;
    r.threshold = threshold;
    r.confusion = confusion_at(labels, scores, threshold);
    r.metrics = summary_metrics(r.confusion);
    r.roc = roc_curve(labels, scores);
    r.pr = pr_curve(labels, scores);
    return r;
}

namespace {

nlohmann::json threshold_json(double t) { return std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr); }

double threshold_from(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

nlohmann::json metric_json(const MetricSet& m) {
    nlohmann::json degenerate = nlohmann::json::array();
    if (m.degenerate & kPrecisionUndefined) degenerate.push_back("precision");
    if (m.degenerate & kRecallUndefined) degenerate.push_back("recall");
    if (m.degenerate & kSpecificityUndefined) degenerate.push_back("specificity");
    if (m.degenerate & kF1Undefined) degenerate.push_back("f1");
    return {{"accuracy", m.accuracy},       {"balanced_accuracy", m.balanced_accuracy},
            {"precision", m.precision},     {"recall", m.recall},
            {"specificity", m.specificity}, {"f1", m.f1},
            {"degenerate", degenerate}};
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["threshold"] = r.threshold;
    j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
    j["metrics"] = metric_json(r.metrics);
    auto roc = nlohmann::json::array();
    for (const auto& p : r.roc.points) roc.push_back({p.fpr, p.tpr, threshold_json(p.threshold)});
    j["roc"] = {{"auc", r.roc.auc}, {"auc_defined", r.roc.auc_defined}, {"points", roc}};
    auto pr = nlohmann::json::array();
    for (const auto& p : r.pr.points) pr.push_back({p.recall, p.precision, p.threshold});
    j["pr"] = {{"average_precision", r.pr.average_precision}, {"defined", r.pr.defined}, {"points", pr}};
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.threshold = j.at("threshold").get<double>();
    const auto& c = j.at("confusion");
    r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                   c.at("fn").get<std::size_t>()};
    r.metrics = summary_metrics(r.confusion);
    r.roc.auc = j.at("roc").at("auc").get<double>();
    r.roc.auc_defined = j.at("roc").at("auc_defined").get<bool>();
    for (const auto& p : j.at("roc").at("points")) r.roc.points.push_back({p[0].get<double>(), p[1].get<double>(), threshold_from(p[2])});
    r.pr.average_precision = j.at("pr").at("average_precision").get<double>();
    r.pr.defined = j.at("pr").at("defined").get<bool>();
    for (const auto& p : j.at("pr").at("points")) r.pr.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    return r;
}

std::string render_metric_table(const EvalReport& r, std::string_view title) {
    std::string out = fmt::format("{}\n", title);
    out += fmt::format("{:<18}{:>10}\n", "Metric", "Value");
    out += std::string(28, '-') + "\n";
    const auto row = [&](std::string_view name, double v) { out += fmt::format("{:<18}{:>10.4f}\n", name, v); };
    row("Accuracy", r.metrics.accuracy);
    row("Balanced Accuracy", r.metrics.balanced_accuracy);
    row("Precision", r.metrics.precision);
    row("Recall", r.metrics.recall);
    row("F1 Score", r.metrics.f1);
    if (r.roc.auc_defined) row("ROC AUC", r.roc.auc);
    if (r.pr.defined) row("Avg Precision", r.pr.average_precision);
    out += fmt::format("Confusion: TP={} FP={} TN={} FN={}\n", r.confusion.tp, r.confusion.fp, r.confusion.tn,
                       r.confusion.fn);
    return out;
}

std::string render_comparison_table(std::span<const ComparisonRow> rows, std::string_view title) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.model.size());
    std::string out = fmt::format("{}\n", title);
    out += fmt::format("{:<{}}  {:>17}  {:>8}  {:>9}  {:>6}\n", "Model", width, "Balanced Accuracy", "F1 Score",
                       "Precision", "Recall");
    out += std::string(width + 50, '-') + "\n";
    for (const auto& r : rows)
        out += fmt::format("{:<{}}  {:>17.3f}  {:>8.3f}  {:>9.3f}  {:>6.3f}\n", r.model, width,
                           r.metrics.balanced_accuracy, r.metrics.f1, r.metrics.precision, r.metrics.recall);
    return out;
}

std::string roc_csv(const RocCurve& curve) {
    std::string out = "fpr,tpr,threshold\n";
    for (const auto& p : curve.points)
        out += fmt::format("{},{},{}\n", format_double(p.fpr), format_double(p.tpr),
                           std::isfinite(p.threshold) ? format_double(p.threshold) : "inf");
    return out;
}

std::string pr_csv(const PrCurve& curve) {
    std::string out = "recall,precision,threshold\n";
    for (const auto& p : curve.points)
        out += fmt::format("{},{},{}\n", format_double(p.recall), format_double(p.precision), format_double(p.threshold));
    return out;
}

}  // namespace mmfuse::metrics
