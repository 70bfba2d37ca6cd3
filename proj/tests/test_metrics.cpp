#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "logpeft/metrics.hpp"
#include "logpeft/rng.hpp"

using namespace logpeft;

namespace {

/// Independent per-class scores used to cross-check weighted_scores.
struct ClassScores {
    double p, r, f;
};

ClassScores class_oracle(const std::vector<int>& preds, const std::vector<int>& labels, int cls) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == cls && labels[i] == cls) ++tp;
        if (preds[i] == cls && labels[i] != cls) ++fp;
        if (preds[i] != cls && labels[i] == cls) ++fn;
    }
    ClassScores s;
    s.p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f = s.p + s.r == 0.0 ? 0.0 : 2.0 * s.p * s.r / (s.p + s.r);
    return s;
}

}  // namespace

TEST_CASE("confusion counts each quadrant", "[metrics]") {
    ConfusionMatrix cm = confusion({1, 0, 1}, {1, 0, 1});
    CHECK(cm.tp == 2);
    CHECK(cm.tn == 1);
    CHECK(cm.fp == 0);
    CHECK(cm.fn == 0);

    CHECK(confusion({1, 1}, {0, 0}).fp == 2);
    CHECK(confusion({0}, {1}).fn == 1);
    CHECK_THROWS_AS(confusion({}, {}), EmptyInput);
    CHECK_THROWS_AS(confusion({1}, {1, 0}), LengthMismatch);
}

TEST_CASE("binary_scores reproduces the reported LogBERT F1", "[metrics]") {
    // integer confusion matrix with exactly P = 0.9203 and R = 0.5147
    ConfusionMatrix cm;
    cm.tp = 47367841;
    cm.fp = 51470000 - cm.tp;
    cm.fn = 92030000 - cm.tp;
    cm.tn = 1;
    MetricsReport r = binary_scores(cm);
    CHECK(r.precision == Catch::Approx(0.9203).epsilon(1e-12));
    CHECK(r.recall == Catch::Approx(0.5147).epsilon(1e-12));
    CHECK(std::abs(r.f1 - 0.6602) < 5e-4);
    CHECK(harmonic_f1(0.9203, 0.5147) == Catch::Approx(r.f1));
}

TEST_CASE("binary_scores degenerate cases", "[metrics]") {
    ConfusionMatrix perfect;
    perfect.tp = 5;
    perfect.tn = 7;
    MetricsReport r = binary_scores(perfect);
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);

    ConfusionMatrix none;
    none.tn = 3;
    none.fn = 2;
    MetricsReport z = binary_scores(none);
    CHECK(z.precision == 0.0);
    CHECK(z.f1 == 0.0);

    ConfusionMatrix empty;
    CHECK_THROWS_AS(binary_scores(empty), EmptyInput);
}

TEST_CASE("weighted scores reduce to macro on balanced symmetric matrices", "[metrics]") {
    ConfusionMatrix cm;
    cm.tp = 8;
    cm.tn = 8;
    cm.fp = 2;
    cm.fn = 2;
    WeightedScores w = weighted_scores(cm);
    // class scores are symmetric, so weighted average equals either class
    CHECK(w.precision == Catch::Approx(0.8));
    CHECK(w.recall == Catch::Approx(0.8));

    ConfusionMatrix all_zero;
    all_zero.tn = 9;
    WeightedScores wz = weighted_scores(all_zero);
    CHECK(wz.recall == 1.0);  // the only class present is always predicted
}

TEST_CASE("weighted scores match a per-class oracle on random data", "[metrics][property]") {
    auto rng = named_stream(121, "metrics");
    for (int round = 0; round < 50; ++round) {
        const int n = 2 + static_cast<int>(uniform_below(rng, 60));
        std::vector<int> preds, labels;
        for (int i = 0; i < n; ++i) {
            preds.push_back(static_cast<int>(uniform_below(rng, 2)));
            labels.push_back(static_cast<int>(uniform_below(rng, 2)));
        }
        const ConfusionMatrix cm = confusion(preds, labels);
        const WeightedScores w = weighted_scores(cm);

        const ClassScores c0 = class_oracle(preds, labels, 0);
        const ClassScores c1 = class_oracle(preds, labels, 1);
        const double s0 = static_cast<double>(std::count(labels.begin(), labels.end(), 0));
        const double s1 = static_cast<double>(n) - s0;
        CHECK(w.precision == Catch::Approx((s0 * c0.p + s1 * c1.p) / n).margin(1e-12));
        CHECK(w.recall == Catch::Approx((s0 * c0.r + s1 * c1.r) / n).margin(1e-12));
        CHECK(w.f1 == Catch::Approx((s0 * c0.f + s1 * c1.f) / n).margin(1e-12));
    }
}

TEST_CASE("metric identities hold on random confusion matrices", "[metrics][property]") {
    auto rng = named_stream(122, "metrics");
    for (int round = 0; round < 100; ++round) {
        ConfusionMatrix cm;
        cm.tp = static_cast<long>(uniform_below(rng, 50));
        cm.fp = static_cast<long>(uniform_below(rng, 50));
        cm.tn = static_cast<long>(uniform_below(rng, 50));
        cm.fn = static_cast<long>(uniform_below(rng, 50));
        if (cm.total() == 0) cm.tn = 1;
        const MetricsReport r = binary_scores(cm);

        // accuracy * total = tp + tn exactly
        CHECK(std::abs(r.accuracy * static_cast<double>(cm.total()) -
                       static_cast<double>(cm.tp + cm.tn)) < 1e-9);
        CHECK(r.f1 <= std::max(r.precision, r.recall) + 1e-12);
        CHECK(r.f1 >= 0.0);
        const bool perfect = cm.fp == 0 && cm.fn == 0 && cm.tp >= 1;
        CHECK((r.f1 == 1.0) == perfect);
    }
}

TEST_CASE("metrics depend only on confusion counts", "[metrics][property]") {
    auto rng = named_stream(123, "metrics");
    std::vector<int> preds, labels;
    for (int i = 0; i < 40; ++i) {
        preds.push_back(static_cast<int>(uniform_below(rng, 2)));
        labels.push_back(static_cast<int>(uniform_below(rng, 2)));
    }
    const MetricsReport before = metrics_report(confusion(preds, labels));

    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_vector(order, rng);
    std::vector<int> preds2, labels2;
    for (std::size_t i : order) {
        preds2.push_back(preds[i]);
        labels2.push_back(labels[i]);
    }
    const MetricsReport after = metrics_report(confusion(preds2, labels2));
    CHECK(before.accuracy == after.accuracy);
    CHECK(before.precision == after.precision);
    CHECK(before.recall == after.recall);
    CHECK(before.f1 == after.f1);
    CHECK(before.f1_w == after.f1_w);
}
