#include <gtest/gtest.h>

#include "mmfuse/curate.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"

using namespace mmfuse;
using namespace mmfuse::curate;

namespace {

const std::string kFixtures = MMFUSE_FIXTURES;

SeriesRecord rec(std::string patient, std::string uid, Modality m, std::string desc) {
    return {std::move(patient), std::move(uid), m, std::move(desc)};
}

// n_total scans over `patients`, the first n_keep of them arterial phase and the rest scouts
std::vector<SeriesRecord> cohort(std::size_t n_total, std::size_t n_keep, std::size_t patients) {
    std::vector<SeriesRecord> out;
    for (std::size_t i = 0; i < n_total; ++i)
        out.push_back(rec("P" + std::to_string(i % patients), "S" + std::to_string(i), i % 4 ? Modality::CT : Modality::MR,
                          i < n_keep ? "axial arterial" : "scout"));
    return out;
}

}  // namespace

TEST(Curate, FixtureMatchesGolden) {
    const auto manifest = manifest_from_csv(read_csv(kFixtures + "/series_manifest.csv"));
    const auto rules = default_rules();
    const auto decisions = classify_all(manifest, rules);
    EXPECT_EQ(decisions_csv(manifest, decisions), read_text(kFixtures + "/series_decisions.golden.csv"));
    const auto s = summarize(manifest, decisions);
    EXPECT_EQ(s.total_scans, 50u);
    EXPECT_EQ(s.kept_scans, 25u);
    EXPECT_EQ(s.unique_patients, 10u);
    EXPECT_DOUBLE_EQ(s.scans_per_patient, 2.5);
    EXPECT_EQ(s.ct_kept, 16u);
    EXPECT_EQ(s.mr_kept, 9u);
}

TEST(Curate, ExclusionBeatsInclusion) {
    const auto r = default_rules();
    EXPECT_FALSE(classify(rec("P", "1", Modality::CT, "Scout arterial"), r).keep);
    EXPECT_FALSE(classify(rec("P", "1", Modality::CT, "pre contrast axial"), r).keep);
    EXPECT_FALSE(classify(rec("P", "1", Modality::MR, "flair_cor"), r).keep);
    EXPECT_TRUE(classify(rec("P", "1", Modality::CT, "AXIAL Venous"), r).keep);
}

TEST(Curate, WordBoundaries) {
    const auto r = default_rules();
    // "cor" must not fire inside "cortical"
    EXPECT_EQ(classify(rec("P", "1", Modality::CT, "cortical phase"), r).reason, "no-include-match");
    EXPECT_EQ(classify(rec("P", "1", Modality::CT, "scouting"), r).reason, "no-include-match");
    EXPECT_EQ(classify(rec("P", "1", Modality::CT, ""), r).reason, "empty");
    EXPECT_EQ(classify(rec("P", "1", Modality::CT, "   "), r).reason, "empty");
    const std::regex w(word_pattern("cor|sag"), std::regex::icase);
    EXPECT_TRUE(std::regex_search("COR T2", w));
    EXPECT_TRUE(std::regex_search("t2_sag", w));
    EXPECT_FALSE(std::regex_search("score", w));
}

TEST(Curate, ModalityParsing) {
    EXPECT_EQ(parse_modality("mri"), Modality::MR);
    EXPECT_EQ(parse_modality("Ct"), Modality::CT);
    EXPECT_THROW(parse_modality("PET"), ValidationError);
}

TEST(Curate, ManifestErrors) {
    EXPECT_THROW(manifest_from_csv(parse_csv("patient_id,series_uid,modality\nP,S,CT\n")), ValidationError);
    EXPECT_THROW(manifest_from_csv(parse_csv("patient_id,series_uid,modality,series_description\nP,S,CT,a\nP,S,CT,b\n")),
                 ValidationError);
}

TEST(Curate, PercentAndPerPatientRounding) {
    const auto m1 = cohort(814, 191, 814);
    const auto s1 = summarize(m1, classify_all(m1, default_rules()));
    EXPECT_EQ(s1.kept_scans, 191u);
    EXPECT_NE(render_summary_table(s1, "X").find("23.5%"), std::string::npos);
    EXPECT_EQ(to_json(s1)["percentage_kept"], "23.5");

    const auto m2 = cohort(716, 716, 100);
    const auto s2 = summarize(m2, classify_all(m2, default_rules()));
    EXPECT_EQ(s2.unique_patients, 100u);
    const auto table = render_summary_table(s2, "X");
    EXPECT_NE(table.find("7.2"), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 9);  // header, rule, seven rows
}

TEST(Curate, EmptyCohort) {
    const std::vector<SeriesRecord> none;
    const auto s = summarize(none, std::vector<Decision>{});
    EXPECT_EQ(s.percent_kept, 0.0);
    EXPECT_EQ(s.scans_per_patient, 0.0);
}

TEST(Curate, RulesJsonRoundTripAndErrors) {
    const auto r = default_rules();
    const auto j = to_json(r);
    EXPECT_EQ(to_json(rules_from_json(j)), j);
    auto bad = j;
    bad["exclude"][0]["pattern"] = "(unclosed";
    EXPECT_THROW(rules_from_json(bad), ValidationError);
    EXPECT_THROW(rules_from_json(nlohmann::json{{"version", "x"}}), ValidationError);

    // custom rules change the outcome
    const auto custom = rules_from_json(nlohmann::json::parse(
        R"({"version":"t","include":{"CT":[{"name":"any","pattern":"."}],"MR":[]},"exclude":[]})"));
    EXPECT_TRUE(classify(rec("P", "1", Modality::CT, "scout"), custom).keep);
    EXPECT_FALSE(classify(rec("P", "1", Modality::MR, "axial t1"), custom).keep);
}

TEST(Curate, TotalPartitionAndIdempotentSummary) {
    const auto manifest = manifest_from_csv(read_csv(kFixtures + "/series_manifest.csv"));
    const auto a = classify_all(manifest, default_rules());
    const auto b = classify_all(manifest, default_rules());
    EXPECT_EQ(a, b);
    const auto s = summarize(manifest, a);
    std::size_t dropped = 0;
    for (const auto& d : a) dropped += !d.keep;
    EXPECT_EQ(s.kept_scans + dropped, manifest.size());
    EXPECT_EQ(summarize(manifest, a), s);
}

TEST(Curate, ReferenceDescriptions) {
    const auto r = default_rules();
    EXPECT_TRUE(classify(rec("P", "1", Modality::CT, "AXIAL ARTERIAL PHASE"), r).keep);
    EXPECT_EQ(classify(rec("P", "1", Modality::MR, "LOCALIZER"), r), (Decision{false, "localizer"}));
    EXPECT_FALSE(classify(rec("P", "1", Modality::CT, "SAG ARTERIAL"), r).keep);
    EXPECT_NE(render_summary_table(CohortSummary{}, "X").find("0.0%"), std::string::npos);
}
