#include <gtest/gtest.h>

#include "mmfuse/aggregate.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/random.hpp"

using namespace mmfuse;
using namespace mmfuse::aggregate;

namespace {

EmbeddingBag bag(std::initializer_list<double> values, InstanceKind kind = InstanceKind::slide) {
    EmbeddingBag b;
    b.patient_id = "P";
    b.kind = kind;
    b.instances.resize(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) b.instances(i++, 0) = v;
    return b;
}

}  // namespace

TEST(Aggregate, TwoStageMeanWeighsSlidesEqually) {
    // one slide of a single patch at 1, one slide of three patches at 2
    const std::vector<EmbeddingBag> slides{bag({1.0}), bag({2.0, 2.0, 2.0})};
    EXPECT_DOUBLE_EQ(two_stage_mean(slides)(0), 1.5);
    // flat pooling over all patches would give 7/4
    EmbeddingBag flat = bag({1.0, 2.0, 2.0, 2.0});
    EXPECT_DOUBLE_EQ(mean_pool(flat)(0), 1.75);
}

TEST(Aggregate, TwoStageMeanReference) {
    const std::vector<EmbeddingBag> slides{bag({1.0, 2.0}), bag({3.0, 3.0, 3.0})};
    EXPECT_DOUBLE_EQ(two_stage_mean(slides)(0), 2.25);
    const std::vector<EmbeddingBag> two{bag({1.0, 3.0}), bag({2.0})};
    EXPECT_DOUBLE_EQ(two_stage_mean(two)(0), 2.0);
}

TEST(Aggregate, MaxWeightSelections) {
    EmbeddingBag b;
    b.instances.resize(3, 2);
    b.instances << 1, 2, 3, 4, 5, 6;
    const std::vector<double> w{0.2, 0.9, 0.9};
    EXPECT_EQ(max_weight_instance(b, w), (Eigen::RowVectorXd(2) << 3, 4).finished());  // tie goes to the earlier row
    const std::vector<EmbeddingBag> slides{bag({1.0}), bag({5.0, 7.0})};
    EXPECT_DOUBLE_EQ(highest_weight_slide(slides, std::vector<double>{0.1, 0.3})(0), 6.0);
    EXPECT_THROW(max_weight_instance(b, std::vector<double>{1.0}), ValidationError);
}

TEST(Aggregate, MaxProbInference) {
    const std::vector<double> p{0.1, 0.62, 0.4};
    EXPECT_DOUBLE_EQ(max_prob_inference(p), 0.62);
    EXPECT_EQ(patient_label(p), 1);
    EXPECT_EQ(patient_label(p, 0.7), 0);
    EXPECT_EQ(patient_label(std::vector<double>{0.5}), 1);  // threshold is inclusive
    EXPECT_THROW(max_prob_inference(std::vector<double>{}), ValidationError);
    EXPECT_THROW(max_prob_inference(std::vector<double>{1.2}), ValidationError);
}

TEST(Aggregate, Validation) {
    EmbeddingBag empty;
    empty.instances.resize(0, 4);
    EXPECT_THROW(mean_pool(empty), ValidationError);
    auto nan = bag({1.0, std::nan("")});
    EXPECT_THROW(mean_pool(nan), ValidationError);
    const std::vector<EmbeddingBag> ragged{bag({1.0}), EmbeddingBag{"P", Eigen::MatrixXd::Zero(1, 2)}};
    EXPECT_THROW(two_stage_mean(ragged), ValidationError);
}

TEST(Aggregate, GroupRowsKeepsFirstSeenOrder) {
    const std::vector<std::string> keys{"b", "a", "b", "c", "a"};
    const auto g = group_rows(keys);
    EXPECT_EQ(g.keys, (std::vector<std::string>{"b", "a", "c"}));
    EXPECT_EQ(g.rows[0], (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(g.rows[1], (std::vector<std::size_t>{1, 4}));
    EXPECT_EQ(g.rows[2], (std::vector<std::size_t>{3}));
}

TEST(Aggregate, MeanPoolInsideEnvelope) {
    Rng rng(41);
    EmbeddingBag b;
    b.instances.resize(7, 5);
    for (Eigen::Index i = 0; i < b.instances.size(); ++i) b.instances.data()[i] = rng.normal();
    const auto m = mean_pool(b);
    for (Eigen::Index c = 0; c < 5; ++c) {
        EXPECT_GE(m(c), b.instances.col(c).minCoeff());
        EXPECT_LE(m(c), b.instances.col(c).maxCoeff());
    }
}

TEST(Aggregate, TwoStageEqualsPooledForEqualCounts) {
    const std::vector<EmbeddingBag> slides{bag({1.0, 4.0}), bag({2.0, 8.0}), bag({0.5, 0.25})};
    EXPECT_EQ(two_stage_mean(slides)(0), mean_pool(bag({1.0, 4.0, 2.0, 8.0, 0.5, 0.25}))(0));
}

TEST(Aggregate, MaxProbPermutationInvariantAndMonotone) {
    Rng rng(42);
    std::vector<double> p(9);
    for (auto& v : p) v = rng.uniform();
    const double base = max_prob_inference(p);
    for (int t = 0; t < 20; ++t) {
        rng.shuffle(p);
        EXPECT_EQ(max_prob_inference(p), base);
    }
    double prev = base;
    for (int t = 0; t < 20; ++t) {
        p.push_back(rng.uniform());
        EXPECT_GE(max_prob_inference(p), prev);
        prev = max_prob_inference(p);
    }
}

TEST(Aggregate, ReferenceExamples) {
    EmbeddingBag b;
    b.instances.resize(2, 2);
    b.instances << 1, 2, 3, 4;
    EXPECT_EQ(mean_pool(b), Eigen::RowVector2d(2, 3));
    EmbeddingBag swapped = b;
    swapped.instances.row(0).swap(swapped.instances.row(1));
    EXPECT_EQ(mean_pool(swapped), mean_pool(b));
    EmbeddingBag one;
    one.instances = Eigen::RowVector3d(0.1, -2, 7);
    EXPECT_EQ(mean_pool(one), Eigen::RowVector3d(0.1, -2, 7));

    const std::vector<EmbeddingBag> slides{bag({0.0}), bag({2.0, 4.0})};
    EXPECT_EQ(two_stage_mean(slides)(0), 1.5);
    EXPECT_EQ(mean_pool(bag({0.0, 2.0, 4.0}))(0), 2.0);
    const std::vector<EmbeddingBag> single{bag({1.0, 2.0, 6.0})};
    EXPECT_EQ(two_stage_mean(single), mean_pool(single[0]));

    EXPECT_EQ(max_prob_inference(std::vector<double>{0.2, 0.9, 0.4}), 0.9);
    EXPECT_EQ(max_prob_inference(std::vector<double>{0.33}), 0.33);
}
