#include <gtest/gtest.h>

#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/random.hpp"
#include "mmfuse/synthetic.hpp"

using namespace mmfuse;
using namespace mmfuse::fusion;

namespace {

constexpr std::array<std::size_t, 3> kSmall{2, 3, 1};

// P1 has everything, P2 lacks radiology, P3 has only histology
ModalityBundle small_bundle(bool with_probs = true) {
    Eigen::MatrixXd c(2, 2), r(2, 3), h(3, 1);
    c << 1, 2, 3, 4;
    r << 5, 6, 7, 8, 9, 10;
    h << 11, 12, 13;
    std::array<std::optional<FeatureTable>, 3> f{make_table({"P1", "P2"}, c, "c"), make_table({"P1", "P4"}, r, "r"),
                                                 make_table({"P1", "P2", "P3"}, h, "h")};
    std::array<std::optional<ProbabilityTable>, 3> p;
    if (with_probs) {
        p[0] = ProbabilityTable{{"P1", "P2"}, {0.9, 0.2}};
        p[1] = ProbabilityTable{{"P1", "P4"}, {0.6, 0.5}};
        p[2] = ProbabilityTable{{"P1", "P2", "P3"}, {0.3, 0.8, 0.4}};
    }
    ModalityBundle b(f, p, kSmall);
    b.set_patients({"P1", "P2", "P3"});
    return b;
}

}  // namespace

TEST(Weights, ReferenceNormalization) {
    const auto w = normalize_weights({0.816, 0.868, 0.702});
    EXPECT_NEAR(w[0], 0.342, 5e-4);
    EXPECT_NEAR(w[1], 0.364, 5e-4);
    EXPECT_NEAR(w[2], 0.294, 5e-4);
    EXPECT_EQ(w[0] + w[1] + w[2], 1.0);
    EXPECT_EQ(normalize_weights(w), w);
}

TEST(Weights, InvariantToPositiveScaling) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const std::array<double, 3> raw{rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};
        const double k = std::exp(rng.uniform(-5, 5));
        const auto a = normalize_weights(raw);
        const auto b = normalize_weights({raw[0] * k, raw[1] * k, raw[2] * k});
        EXPECT_EQ(a, b);
    }
    EXPECT_THROW(normalize_weights({0, 0, 0}), ValidationError);
    EXPECT_THROW(normalize_weights({-1, 1, 1}), ValidationError);
}

TEST(LateSum, RenormalizeMatchesDirectMean) {
    const auto b = small_bundle();
    const auto w = normalize_weights({1, 1, 1});
    const auto f = late_weighted_sum(b, w);
    EXPECT_EQ(f[0], (w[0] * 0.9 + w[1] * 0.6 + w[2] * 0.3) / (w[0] + w[1] + w[2]));
    EXPECT_EQ(f[1], (w[0] * 0.2 + w[2] * 0.8) / (w[0] + w[2]));
    EXPECT_EQ(f[2], 0.4);
    // the grid puts one spare unit on the first weight, far below any metric precision
    EXPECT_NEAR(f[0], 0.6, 1e-9);
    EXPECT_NEAR(f[1], 0.5, 1e-9);
}

TEST(LateSum, ZeroImputeShrinksMissing) {
    const auto b = small_bundle();
    const std::array<double, 3> w{0.5, 0.25, 0.25};
    const auto f = late_weighted_sum(b, w, MissingPolicy::zero_impute);
    EXPECT_NEAR(f[1], 0.5 * 0.2 + 0.25 * 0.8, 1e-12);
    EXPECT_NEAR(f[2], 0.25 * 0.4, 1e-12);
    EXPECT_THROW(late_weighted_sum(b, w, MissingPolicy::learned_default), ValidationError);
}

TEST(LateSum, ZeroWeightOnOnlyModalityFails) {
    const auto b = small_bundle();
    EXPECT_THROW(late_weighted_sum(b, {1, 1, 0}), ValidationError);
}

TEST(EarlyConcat, LayoutMasksAndSlices) {
    const auto b = small_bundle();
    const auto f = early_concat(b);
    ASSERT_EQ(f.width(), 2u + 3u + 1u + 3u);
    EXPECT_EQ(f.data.row(0).tail(3), Eigen::RowVector3d(1, 1, 1));
    EXPECT_EQ(f.data.row(1).tail(3), Eigen::RowVector3d(1, 0, 1));
    EXPECT_EQ(f.data.row(2).tail(3), Eigen::RowVector3d(0, 0, 1));
    EXPECT_TRUE(slice_block(f, b, Modality::radiology).row(1).isZero());
    for (auto m : {Modality::clinical, Modality::radiology, Modality::histology})
        for (std::size_t p = 0; p < b.size(); ++p)
            EXPECT_EQ(Eigen::RowVectorXd(slice_block(f, b, m).row(static_cast<Eigen::Index>(p))), b.embedding(p, m));
    EXPECT_THROW(early_concat(b, MissingPolicy::renormalize), ValidationError);
    EXPECT_THROW(early_concat(b, MissingPolicy::learned_default), ValidationError);
}

TEST(EarlyConcat, LearnedDefaultFillsMeans) {
    const auto b = small_bundle();
    const std::vector<std::size_t> rows{0, 1, 2};
    const auto d = modality_means(b, rows);
    EXPECT_EQ(d[1], Eigen::RowVector3d(5, 6, 7));  // only P1 has radiology
    EXPECT_EQ(d[0], Eigen::RowVector2d(2, 3));
    const auto f = early_concat(b, MissingPolicy::learned_default, &d);
    EXPECT_EQ(Eigen::RowVectorXd(slice_block(f, b, Modality::radiology).row(1)), d[1]);
    EXPECT_EQ(f.data(1, 2 + 3 + 1 + 1), 0.0);  // mask still records the absence
}

TEST(EarlyMeanPool, AveragesPresentProjections) {
    const auto b = small_bundle();
    std::array<Projection, 3> proj;
    for (std::size_t m = 0; m < 3; ++m) {
        proj[m].weight = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(kSmall[m]), 2);
        proj[m].bias = Eigen::MatrixXd::Zero(1, 2);
    }
    const auto f = early_mean_pool(b, proj);
    EXPECT_DOUBLE_EQ(f.data(0, 0), (3.0 + 18.0 + 11.0) / 3.0);
    EXPECT_DOUBLE_EQ(f.data(1, 0), (7.0 + 12.0) / 2.0);
    EXPECT_DOUBLE_EQ(f.data(2, 1), 13.0);
}

TEST(Bundle, PresenceAndErrors) {
    const auto b = small_bundle();
    EXPECT_TRUE(b.present(0, Modality::radiology));
    EXPECT_FALSE(b.present(1, Modality::radiology));
    EXPECT_EQ(b.orphans(std::vector<std::string>{"P1", "P2", "P3"}), std::vector<std::string>{"P4"});
    EXPECT_THROW(b.probability(1, Modality::radiology), ValidationError);
    auto copy = small_bundle();
    EXPECT_THROW(copy.set_patients({"P1", "P9"}), ValidationError);
    Eigen::MatrixXd wrong(1, 5);
    wrong.setZero();
    std::array<std::optional<FeatureTable>, 3> f{make_table({"A"}, wrong, "c"), std::nullopt, std::nullopt};
    EXPECT_THROW(ModalityBundle(f, {}, kSmall), ValidationError);
}

TEST(LateInputs, ProbabilitiesThenMask) {
    const auto x = late_inputs(small_bundle());
    ASSERT_EQ(x.cols(), 6);
    EXPECT_EQ(x.row(1), (Eigen::RowVectorXd(6) << 0.2, 0.0, 0.8, 1, 0, 1).finished());
}

TEST(Strategy, NamesRoundTrip) {
    for (auto s : {Strategy::early_concat, Strategy::early_mean_pool, Strategy::late_weighted_sum, Strategy::late_learned})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    EXPECT_THROW(parse_strategy("stacking"), ValidationError);
    EXPECT_EQ(parse_policy("zero-impute"), MissingPolicy::zero_impute);
}

TEST(Experiment, SmallRunIsDeterministicAndComplete) {
    synthetic::SyntheticSpec s;
    s.patients = 200;
    s.dims = {8, 16, 16};
    s.seed = 5;
    const auto data = synthetic::generate_synthetic(s);
    std::array<std::optional<FeatureTable>, 3> f{data.features[0], data.features[1], data.features[2]};
    ModalityBundle b(f, {}, s.dims);
    std::vector<std::string> ids = data.labels.ids;
    std::sort(ids.begin(), ids.end());
    b.set_patients(ids);
    ExperimentConfig c;
    c.train.epochs = 5;
    c.projection_dim = 4;
    c.strategies = {Strategy::late_weighted_sum, Strategy::early_concat, Strategy::late_learned, Strategy::early_mean_pool};
    c.seed = 5;
    const auto r1 = run_fusion_experiment(b, data.labels, c);
    const auto r2 = run_fusion_experiment(b, data.labels, c);
    EXPECT_EQ(to_json(r1).dump(), to_json(r2).dump());
    ASSERT_EQ(r1.rows.size(), 7u);
    EXPECT_EQ(r1.rows[0].model, baseline_name(Modality::clinical));
    EXPECT_NEAR(r1.weights[0] + r1.weights[1] + r1.weights[2], 1.0, 1e-9);
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        // unimodal rows score only patients that have the modality
        if (i < 3) EXPECT_LE(r1.rows[i].test_patients, r1.split.test.size());
        else EXPECT_EQ(r1.rows[i].test_patients, r1.split.test.size());
    }
    EXPECT_EQ(r1.rows[0].test_patients, r1.split.test.size());  // clinical is never missing
    const auto table = render_experiment_table(r1);
    EXPECT_NE(table.find(std::string(row_name(Strategy::early_concat))), std::string::npos);
}

TEST(Experiment, ConfigJsonRoundTrip) {
    ExperimentConfig c;
    c.strategies = {Strategy::late_learned};
    c.concat_policy = MissingPolicy::learned_default;
    EXPECT_EQ(to_json(experiment_config_from_json(to_json(c))).dump(), to_json(c).dump());
}

TEST(LateSum, WithinRangeAndPoliciesAgreeWhenComplete) {
    Rng rng(51);
    for (int t = 0; t < 50; ++t) {
        std::array<std::optional<ProbabilityTable>, 3> p;
        std::vector<std::string> ids;
        for (int i = 0; i < 20; ++i) ids.push_back("P" + std::to_string(i));
        for (std::size_t m = 0; m < 3; ++m) {
            p[m] = ProbabilityTable{ids, {}};
            for (int i = 0; i < 20; ++i) p[m]->probs.push_back(rng.uniform());
        }
        ModalityBundle b({}, p, kSmall);
        b.set_patients(ids);
        const std::array<double, 3> w{rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
        const auto r = late_weighted_sum(b, w, MissingPolicy::renormalize);
        const auto z = late_weighted_sum(b, w, MissingPolicy::zero_impute);
        EXPECT_EQ(r, z);
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto [lo, hi] = std::minmax({p[0]->probs[i], p[1]->probs[i], p[2]->probs[i]});
            EXPECT_GE(r[i], lo);
            EXPECT_LE(r[i], hi);
        }
    }
}

TEST(EarlyConcat, DefaultWidthsAndPlacement) {
    Rng rng(81);
    std::array<std::optional<FeatureTable>, 3> f;
    for (std::size_t m = 0; m < 3; ++m) {
        Eigen::MatrixXd d(2, static_cast<Eigen::Index>(kDefaultWidths[m]));
        for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = 1.0 + rng.uniform();
        f[m] = make_table(m == 1 ? std::vector<std::string>{"A"} : std::vector<std::string>{"A", "B"},
                          m == 1 ? Eigen::MatrixXd(d.topRows(1)) : d, "f");
    }
    // B has only clinical and histology; C only radiology is impossible here, so drop histology for B via a fresh table
    f[2] = make_table({"A"}, Eigen::MatrixXd(f[2]->data.topRows(1)), "f");
    ModalityBundle b(f, {}, kDefaultWidths);
    b.set_patients({"A", "B"});
    const auto out = early_concat(b);
    EXPECT_EQ(out.width(), 1600u + 3u);
    // B: clinical block nonzero, everything after it zero except its mask bit
    EXPECT_TRUE((out.data.row(1).head(64).array() != 0.0).all());
    EXPECT_TRUE(out.data.row(1).segment(64, 1536).isZero());
    EXPECT_EQ(out.data.row(1).tail(3), Eigen::RowVector3d(1, 0, 0));
    // row order follows the patient order
    auto rev = b;
    rev.set_patients({"B", "A"});
    const auto out2 = early_concat(rev);
    EXPECT_EQ(out2.data.row(0), out.data.row(1));
    EXPECT_EQ(out2.data.row(1), out.data.row(0));
}

TEST(EarlyMeanPool, ReferenceAndRenormalizationCrossCheck) {
    Eigen::MatrixXd a(1, 2), c(1, 2), h(1, 2);
    a << 1, 1;
    c << 3, 3;
    h << 5, 9;
    std::array<std::optional<FeatureTable>, 3> f{make_table({"P", "Q"}, (Eigen::MatrixXd(2, 2) << 1, 1, 7, 2).finished(), "a"),
                                                 make_table({"P"}, c, "r"), make_table({"Q"}, h, "h")};
    ModalityBundle b(f, {}, {2, 2, 2});
    b.set_patients({"P", "Q"});
    std::array<Projection, 3> id;
    for (auto& p : id) {
        p.weight = Eigen::MatrixXd::Identity(2, 2);
        p.bias = Eigen::MatrixXd::Zero(1, 2);
    }
    const auto out = early_mean_pool(b, id);
    EXPECT_EQ(out.data.row(0), Eigen::RowVector2d(2, 2));
    // mean over present = zero-imputed sum * (total / present) / total
    const Eigen::RowVectorXd zero_sum = b.embedding(1, Modality::clinical) + b.embedding(1, Modality::radiology) +
                                        b.embedding(1, Modality::histology);
    EXPECT_EQ(Eigen::RowVectorXd(out.data.row(1)), zero_sum / 3.0 * (3.0 / 2.0));
    std::array<std::optional<FeatureTable>, 3> solo{make_table({"P"}, a, "a"), std::nullopt, std::nullopt};
    ModalityBundle s(solo, {}, {2, 2, 2});
    s.set_patients({"P"});
    EXPECT_EQ(early_mean_pool(s, id).data.row(0), Eigen::RowVector2d(1, 1));
}

TEST(LateSum, EqualProbabilitiesAndMissingRadiology) {
    std::array<std::optional<ProbabilityTable>, 3> p{ProbabilityTable{{"A", "B"}, {0.37, 0.6}},
                                                     ProbabilityTable{{"A"}, {0.37}},
                                                     ProbabilityTable{{"A", "B"}, {0.37, 0.2}}};
    ModalityBundle b({}, p, kSmall);
    b.set_patients({"A", "B"});
    const std::array<double, 3> w{0.5, 0.3, 0.2};
    const auto f = late_weighted_sum(b, w);
    EXPECT_EQ(f[0], 0.37);
    const auto n = normalize_weights(w);
    EXPECT_EQ(f[1], (n[0] * 0.6 + n[2] * 0.2) / (n[0] + n[2]));
}

TEST(LateLearned, DeterministicAndRecoversSingleModality) {
    Rng rng(82);
    std::vector<std::string> ids;
    std::vector<double> probs;
    std::vector<int> y;
    for (int i = 0; i < 120; ++i) {
        ids.push_back("P" + std::to_string(i));
        y.push_back(i % 3 ? 1 : 0);
        probs.push_back(y.back() ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4));
    }
    std::array<std::optional<ProbabilityTable>, 3> p{ProbabilityTable{ids, probs}, std::nullopt, std::nullopt};
    ModalityBundle b({}, p, kSmall);
    b.set_patients(ids);
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < 120; ++i) (i < 100 ? tr : va).push_back(i);
    const auto a = late_learned(b, y, tr, va, late_head_config(3), 4);
    const auto again = late_learned(b, y, tr, va, late_head_config(3), 4);
    EXPECT_EQ(a.fused, again.fused);
    EXPECT_LT(a.trained.history.back().train_loss, 0.2);
    std::size_t right = 0;
    for (std::size_t i = 0; i < 120; ++i) right += (a.fused[i] >= 0.5) == (y[i] == 1);
    EXPECT_GE(right, 118u);

    // constant labels: the head predicts the constant
    const std::vector<int> ones(120, 1);
    const auto c = late_learned(b, ones, tr, va, late_head_config(3), 4);
    for (double v : c.fused) EXPECT_GE(v, 0.5);
}

TEST(Experiment, SingleModalityWeightedSumEqualsBaseline) {
    synthetic::SyntheticSpec s;
    s.patients = 150;
    s.dims = {8, 8, 8};
    s.missingness = {0.0, 0.0, 0.0};
    s.seed = 6;
    const auto data = synthetic::generate_synthetic(s);
    std::array<std::optional<FeatureTable>, 3> f{data.features[0], std::nullopt, std::nullopt};
    std::array<std::optional<ProbabilityTable>, 3> none;
    ModalityBundle b(f, none, s.dims);
    auto ids = data.labels.ids;
    std::sort(ids.begin(), ids.end());
    b.set_patients(ids);
    ExperimentConfig c;
    c.train.epochs = 5;
    c.strategies = {Strategy::late_weighted_sum};
    const auto r = run_fusion_experiment(b, data.labels, c);
    const auto& base = r.rows[0].report;
    const auto& fused = r.rows.back().report;
    EXPECT_EQ(fused.confusion, base.confusion);
    EXPECT_EQ(fused.roc.auc, base.roc.auc);
    const auto table = render_experiment_table(r);
    const auto header = table.substr(table.find("Model"));
    EXPECT_LT(header.find("Balanced Accuracy"), header.find("F1 Score"));
    EXPECT_LT(header.find("F1 Score"), header.find("Precision"));
    EXPECT_LT(header.find("Precision"), header.find("Recall"));
}
