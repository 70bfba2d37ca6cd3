#pragma once

#include <vector>

#include "logpeft/errors.hpp"

namespace logpeft {

/// Binary confusion counts with class 1 (anomalous) as the positive class.
struct ConfusionMatrix {
    long tp = 0;
    long fp = 0;
    long tn = 0;
    long fn = 0;

    long total() const { return tp + fp + tn + fn; }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.empty()) throw EmptyInput("confusion: no predictions");
    if (preds.size() != labels.size())
        throw LengthMismatch("confusion: preds and labels differ in length");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] != 0, y = labels[i] != 0;
        if (p && y) ++cm.tp;
        else if (p && !y) ++cm.fp;
        else if (!p && !y) ++cm.tn;
        else ++cm.fn;
    }
    return cm;
}

/// Harmonic mean of precision and recall, 0 when both are 0.
inline double harmonic_f1(double precision, double recall) {
    const double denom = precision + recall;
    return denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
}

/// Scores matching the reported metric columns: binary scores treat class 1
/// as positive; the *_w variants average both classes' scores weighted by
/// true-class support. Zero denominators score 0.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double precision_w = 0.0;
    double recall_w = 0.0;
    double f1_w = 0.0;
};

namespace detail {

inline double ratio(long num, long denom) {
    return denom == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(denom);
}

}  // namespace detail

inline MetricsReport binary_scores(const ConfusionMatrix& cm) {
    if (cm.total() < 1) throw EmptyInput("binary_scores: empty confusion matrix");
    MetricsReport r;
    r.accuracy = detail::ratio(cm.tp + cm.tn, cm.total());
    r.precision = detail::ratio(cm.tp, cm.tp + cm.fp);
    r.recall = detail::ratio(cm.tp, cm.tp + cm.fn);
    r.f1 = harmonic_f1(r.precision, r.recall);
    return r;
}

struct WeightedScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Per-class precision/recall/F1 averaged with true-class supports as
/// weights. With class 0 as positive the counts transpose: tp0 = tn,
/// fp0 = fn, fn0 = fp.
inline WeightedScores weighted_scores(const ConfusionMatrix& cm) {
    if (cm.total() < 1) throw EmptyInput("weighted_scores: empty confusion matrix");
    const double p1 = detail::ratio(cm.tp, cm.tp + cm.fp);
    const double r1 = detail::ratio(cm.tp, cm.tp + cm.fn);
    const double f1_1 = harmonic_f1(p1, r1);
    const double p0 = detail::ratio(cm.tn, cm.tn + cm.fn);
    const double r0 = detail::ratio(cm.tn, cm.tn + cm.fp);
    const double f1_0 = harmonic_f1(p0, r0);
    const double support1 = static_cast<double>(cm.tp + cm.fn);
    const double support0 = static_cast<double>(cm.tn + cm.fp);
    const double total = support0 + support1;
    WeightedScores w;
    w.precision = (support0 * p0 + support1 * p1) / total;
    w.recall = (support0 * r0 + support1 * r1) / total;
    w.f1 = (support0 * f1_0 + support1 * f1_1) / total;
    return w;
}

/// Binary and weighted scores together.
inline MetricsReport metrics_report(const ConfusionMatrix& cm) {
    MetricsReport r = binary_scores(cm);
    const WeightedScores w = weighted_scores(cm);
    r.precision_w = w.precision;
    r.recall_w = w.recall;
    r.f1_w = w.f1;
    return r;
}

}  // namespace logpeft
