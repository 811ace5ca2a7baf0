#include <gtest/gtest.h>

#include <filesystem>

#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/synthetic.hpp"

using namespace mmfuse;
using namespace mmfuse::synthetic;

TEST(Synthetic, PrevalenceWithinOne) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SyntheticSpec s;
        s.patients = 618;
        s.dims = {8, 8, 8};
        s.seed = seed;
        const auto d = generate_synthetic(s);
        const auto pos = std::count(d.labels.labels.begin(), d.labels.labels.end(), 1);
        EXPECT_NEAR(static_cast<double>(pos), 0.77 * 618, 1.0);
    }
}

TEST(Synthetic, MissingnessKeepsAtLeastOneModality) {
    SyntheticSpec s;
    s.patients = 300;
    s.dims = {4, 4, 4};
    s.missingness = {0.6, 0.6, 0.6};
    const auto d = generate_synthetic(s);
    std::set<std::string> seen;
    for (const auto& t : d.features) seen.insert(t.ids.begin(), t.ids.end());
    EXPECT_EQ(seen.size(), 300u);
    EXPECT_LT(d.features[1].ids.size(), 200u);
    // every radiology patient has 1..max_scans scan rows
    std::map<std::string, int> scans;
    for (const auto& id : d.radiology_instances.ids) ++scans[id];
    EXPECT_EQ(scans.size(), d.features[1].ids.size());
    for (const auto& [id, n] : scans) {
        EXPECT_GE(n, 1);
        EXPECT_LE(n, 3);
    }
}

TEST(Synthetic, RecordsParseWithDeclaredColumns) {
    SyntheticSpec s;
    s.patients = 50;
    s.dims = {4, 4, 4};
    const auto d = generate_synthetic(s);
    const auto t = parse_csv(d.clinical_records);
    EXPECT_EQ(t.rows.size(), 50u);
    for (const auto& col : default_record_columns()) EXPECT_TRUE(t.has_column(col.at("name").get<std::string>()));
}

TEST(Synthetic, FilesAreByteIdenticalAcrossRuns) {
    SyntheticSpec s;
    s.patients = 80;
    s.dims = {6, 10, 12};
    s.seed = 9;
    const auto base = std::filesystem::temp_directory_path() / "mmfuse_synth_test";
    std::filesystem::remove_all(base);
    const auto a = write_synthetic(generate_synthetic(s), base / "a");
    const auto b = write_synthetic(generate_synthetic(s), base / "b");
    ASSERT_EQ(a.size(), 6u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(read_text(a[i]), read_text(b[i])) << a[i];
    s.seed = 10;
    const auto c = write_synthetic(generate_synthetic(s), base / "c");
    EXPECT_NE(read_text(a[0]), read_text(c[0]));
    std::filesystem::remove_all(base);
}

TEST(Synthetic, SpecValidation) {
    SyntheticSpec s;
    s.positive_rate = 1.5;
    EXPECT_THROW(s.validate(), ValidationError);
    s = {};
    s.missingness = {1.0, 1.0, 1.0};
    EXPECT_THROW(s.validate(), ValidationError);
    s = {};
    s.informative_dims = 0;
    EXPECT_THROW(s.validate(), ValidationError);
    s = {};
    s.complementarity = -1.0;
    EXPECT_THROW(s.validate(), ValidationError);
    EXPECT_EQ(to_json(synthetic_spec_from_json(to_json(SyntheticSpec{}))).dump(), to_json(SyntheticSpec{}).dump());
}

// With no signal in the features the unimodal baselines must sit at chance.
TEST(SyntheticSlow, NullComplementarityGivesChanceBaselines) {
    std::array<double, 3> sum{};
    const int seeds = 10;
    for (int seed = 0; seed < seeds; ++seed) {
        SyntheticSpec s;
        s.complementarity = 0.0;
        s.dims = {16, 32, 32};
        s.seed = static_cast<std::uint64_t>(seed);
        const auto d = generate_synthetic(s);
        std::array<std::optional<FeatureTable>, 3> f{d.features[0], d.features[1], d.features[2]};
        fusion::ModalityBundle b(f, {}, s.dims);
        auto ids = d.labels.ids;
        std::sort(ids.begin(), ids.end());
        b.set_patients(ids);
        fusion::ExperimentConfig c;
        c.seed = static_cast<std::uint64_t>(seed);
        c.train.epochs = 20;
        c.strategies = {};
        const auto r = fusion::run_fusion_experiment(b, d.labels, c);
        for (std::size_t m = 0; m < 3; ++m) sum[m] += r.rows[m].report.metrics.balanced_accuracy;
    }
    for (double s : sum) EXPECT_NEAR(s / seeds, 0.5, 0.05);
}
