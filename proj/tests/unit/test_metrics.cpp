#include <gtest/gtest.h>

#include <cmath>

#include "mmfuse/error.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/random.hpp"
#include "oracles.hpp"

using namespace mmfuse;
using namespace mmfuse::metrics;

TEST(Confusion, CountsAndThreshold) {
    const std::vector<int> y{1, 1, 0, 0, 1};
    const std::vector<double> s{0.9, 0.5, 0.5, 0.1, 0.2};
    const auto cm = confusion_at(y, s, 0.5);  // >= threshold is positive
    EXPECT_EQ(cm, (ConfusionMatrix{2, 1, 1, 1}));
    EXPECT_EQ(cm.total(), 5u);
}

TEST(Confusion, RejectsBadInput) {
    const std::vector<int> y{1, 0};
    const std::vector<int> bad{1, 2};
    const std::vector<int> shorter{1};
    EXPECT_THROW(confusion(y, bad), ValidationError);
    EXPECT_THROW(confusion(y, shorter), ValidationError);
    EXPECT_THROW(confusion(std::vector<int>{}, std::vector<int>{}), ValidationError);
    const std::vector<double> nan{0.5, std::nan("")};
    EXPECT_THROW(confusion_at(y, nan), ValidationError);
}

TEST(Summary, TableThreeAndFiveF1) {
    EXPECT_NEAR(f1_score(0.8077, 0.9633), 0.8787, 5e-4);
    EXPECT_NEAR(f1_score(0.8889, 0.9541), 0.9204, 5e-4);
    EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Summary, DegenerateRatiosReportZeroWithFlags) {
    // nothing predicted positive and no negatives present
    const auto m = summary_metrics({0, 0, 0, 4});
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.specificity, 0.0);
    EXPECT_TRUE(m.degenerate & kPrecisionUndefined);
    EXPECT_TRUE(m.degenerate & kSpecificityUndefined);
    EXPECT_TRUE(m.degenerate & kF1Undefined);
    EXPECT_FALSE(m.degenerate & kRecallUndefined);
    EXPECT_FALSE(std::isnan(m.f1));
}

TEST(Summary, BalancedAccuracyEnumerationOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const ConfusionMatrix cm{rng.index(50) + 1, rng.index(50), rng.index(50) + 1, rng.index(50)};
        std::vector<int> y, p;
        for (std::size_t i = 0; i < cm.tp; ++i) y.push_back(1), p.push_back(1);
        for (std::size_t i = 0; i < cm.fn; ++i) y.push_back(1), p.push_back(0);
        for (std::size_t i = 0; i < cm.tn; ++i) y.push_back(0), p.push_back(0);
        for (std::size_t i = 0; i < cm.fp; ++i) y.push_back(0), p.push_back(1);
        double pos = 0, hit = 0, neg = 0, rej = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            (y[i] ? pos : neg) += 1;
            if (y[i] && p[i]) hit += 1;
            if (!y[i] && !p[i]) rej += 1;
        }
        const auto m = summary_metrics(confusion(y, p));
        EXPECT_EQ(m.balanced_accuracy, 0.5 * (hit / pos + rej / neg));
        EXPECT_NEAR(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall), 1e-12);
    }
}

TEST(Summary, BalancedEqualsAccuracyOnBalancedSet) {
    const auto m = summary_metrics({30, 12, 38, 20});  // 50 positives, 50 negatives
    EXPECT_DOUBLE_EQ(m.balanced_accuracy, m.accuracy);
}

TEST(Summary, PermutationInvariant) {
    Rng rng(3);
    std::vector<int> y(80);
    std::vector<double> s(80);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.bernoulli(0.4), s[i] = rng.uniform();
    const auto a = evaluate(y, s);
    std::vector<std::size_t> perm(y.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<int> y2;
    std::vector<double> s2;
    for (auto i : perm) y2.push_back(y[i]), s2.push_back(s[i]);
    const auto b = evaluate(y2, s2);
    EXPECT_EQ(a.confusion, b.confusion);
    EXPECT_EQ(a.roc.auc, b.roc.auc);
    EXPECT_EQ(a.pr.average_precision, b.pr.average_precision);
}

TEST(Roc, TrivialCases) {
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(roc_curve(y, std::vector<double>{0.1, 0.2, 0.8, 0.9}).auc, 1.0);
    EXPECT_DOUBLE_EQ(roc_curve(y, std::vector<double>{0.5, 0.5, 0.5, 0.5}).auc, 0.5);
    const auto one_class = roc_curve(std::vector<int>{1, 1}, std::vector<double>{0.2, 0.3});
    EXPECT_FALSE(one_class.auc_defined);
}

TEST(Roc, CurveStartsAtOriginEndsAtOne) {
    const std::vector<int> y{0, 1, 0, 1, 1};
    const auto c = roc_curve(y, std::vector<double>{0.3, 0.3, 0.1, 0.9, 0.6});
    EXPECT_EQ(c.points.front().fpr, 0.0);
    EXPECT_TRUE(std::isinf(c.points.front().threshold));
    EXPECT_EQ(c.points.back().fpr, 1.0);
    EXPECT_EQ(c.points.back().tpr, 1.0);
    EXPECT_EQ(c.points.size(), 5u);  // origin + four distinct scores
}

TEST(Roc, MatchesPairwiseOracleAndMonotoneTransform) {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        std::vector<int> y(200);
        std::vector<double> s(200), ts(200);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = rng.bernoulli(0.3);
            s[i] = static_cast<double>(rng.index(41) + 8 * static_cast<std::size_t>(y[i])) / 40.0;  // coarse grid forces ties
            ts[i] = std::exp(3.0 * s[i]) - 7.0;
        }
        const auto a = roc_curve(y, s).auc;
        EXPECT_NEAR(a, oracle::pairwise_auc(y, s), 1e-9);
        EXPECT_NEAR(a, roc_curve(y, ts).auc, 1e-12);
    }
}

TEST(Pr, TrivialCases) {
    const std::vector<int> y{0, 1, 1, 0, 1};
    EXPECT_DOUBLE_EQ(pr_curve(y, std::vector<double>{0.1, 0.9, 0.8, 0.2, 0.7}).average_precision, 1.0);
    // one threshold: everything predicted positive, precision is the base rate at recall 1
    const auto flat = pr_curve(y, std::vector<double>{0.4, 0.4, 0.4, 0.4, 0.4});
    ASSERT_EQ(flat.points.size(), 1u);
    EXPECT_DOUBLE_EQ(flat.points[0].recall, 1.0);
    EXPECT_DOUBLE_EQ(flat.points[0].precision, 0.6);
    EXPECT_FALSE(pr_curve(std::vector<int>{0, 0}, std::vector<double>{0.1, 0.2}).defined);
}

TEST(Pr, MatchesThresholdSweepOracle) {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
        std::vector<int> y(150);
        std::vector<double> s(150);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = rng.bernoulli(0.4);
            s[i] = std::round(rng.uniform() * 25.0) / 25.0;
        }
        y[0] = 1;
        EXPECT_NEAR(pr_curve(y, s).average_precision, oracle::sweep_average_precision(y, s), 1e-9);
    }
}

TEST(Report, JsonRoundTrip) {
    const std::vector<int> y{0, 1, 1, 0, 1, 0};
    const std::vector<double> s{0.2, 0.7, 0.4, 0.6, 0.9, 0.1};
    const auto r = evaluate(y, s, 0.5);
    const auto back = report_from_json(to_json(r));
    EXPECT_EQ(back.confusion, r.confusion);
    EXPECT_EQ(back.metrics.f1, r.metrics.f1);
    EXPECT_EQ(back.roc.points.size(), r.roc.points.size());
    EXPECT_TRUE(std::isinf(back.roc.points[0].threshold));
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}

TEST(Report, TablesRender) {
    const std::vector<ComparisonRow> rows{{"Model A", summary_metrics({8, 2, 7, 3})}};
    const auto t = render_comparison_table(rows, "Comparison");
    EXPECT_NE(t.find("Balanced Accuracy"), std::string::npos);
    EXPECT_NE(t.find("Model A"), std::string::npos);
    EXPECT_NE(t.find("0.753"), std::string::npos);  // (8/11 + 7/9) / 2
    EXPECT_NE(t.find("0.800"), std::string::npos);  // precision 8/10
}

TEST(Summary, F1IsHarmonicMeanOfReportedRatios) {
    Rng rng(61);
    for (int t = 0; t < 500; ++t) {
        ConfusionMatrix cm{1 + rng.index(50), rng.index(50), rng.index(50), rng.index(50)};
        const auto m = summary_metrics(cm);
        EXPECT_NEAR(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall), 1e-12);
    }
}

TEST(Confusion, PerfectInvertedAndRecount) {
    Rng rng(62);
    std::vector<int> y(1000), inv(1000), pred(1000);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = rng.bernoulli(0.4);
        inv[i] = 1 - y[i];
        pred[i] = rng.bernoulli(0.5);
    }
    const auto perfect = confusion(y, y);
    EXPECT_EQ(perfect.fp, 0u);
    EXPECT_EQ(perfect.fn, 0u);
    const auto flipped = confusion(y, inv);
    EXPECT_EQ(flipped.tp, perfect.fn);
    EXPECT_EQ(flipped.fn, perfect.tp);
    EXPECT_EQ(flipped.tn, perfect.fp);
    EXPECT_EQ(flipped.fp, perfect.tn);
    ConfusionMatrix brute;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] && pred[i]) ++brute.tp;
        if (!y[i] && pred[i]) ++brute.fp;
        if (!y[i] && !pred[i]) ++brute.tn;
        if (y[i] && !pred[i]) ++brute.fn;
    }
    EXPECT_EQ(confusion(y, pred), brute);
    EXPECT_EQ(summary_metrics({5, 0, 10, 5}).balanced_accuracy, 0.75);
}
