#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <set>

#include "mmfuse/error.hpp"
#include "mmfuse/features.hpp"
#include "mmfuse/hash.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/pipeline.hpp"
#include "mmfuse/volume.hpp"

using namespace mmfuse;
using namespace mmfuse::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

RunConfig small_run(const fs::path& out) {
    RunConfig c = default_config();
    c.out_dir = out;
    c.seed = 11;
    c.synthetic.patients = 160;
    c.synthetic.dims = {8, 24, 32};
    for (auto& [name, p] : c.profiles) p.train.epochs = 4;
    c.fusion.train.epochs = 4;
    c.fusion.projection_dim = 8;
    return c;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double d2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, DefaultsRoundTripWithStableHash) {
    const auto c = default_config();
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 64u);
}

TEST(Config, HashIgnoresOutDirButNotSeed) {
    auto a = default_config();
    auto b = a;
    b.out_dir = "/elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, PartialOverridesAndSync) {
    const auto c = config_from_json(nlohmann::json::parse(R"({"seed": 7, "threshold": 0.4, "synthetic": {"patients": 90}})"));
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.synthetic.patients, 90u);
    EXPECT_EQ(c.fusion.seed, 7u);
    EXPECT_EQ(c.fusion.threshold, 0.4);
    EXPECT_EQ(c.synthetic.dims, (std::array<std::size_t, 3>{64, 512, 1024}));
}

TEST(Config, RejectsUnknownAndConflictingKeys) {
    EXPECT_NE(error_of([] { config_from_json(nlohmann::json::parse(R"({"sede": 1})")); }).find("sede"), std::string::npos);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"fusion": {"seed": 3}})")), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"split_fractions": [0.5, 0.5, 0.5]})")), ValidationError);
}

TEST(Config, ProfilesMatchRecipes) {
    const auto ehr = ehr_profile().spec(40);
    EXPECT_EQ(ehr.layer_sizes, (std::vector<std::size_t>{40, 256, 128, 64, 2}));
    const auto mil = radiology_mil_profile();
    EXPECT_EQ(mil.spec(512).layer_sizes, (std::vector<std::size_t>{512, 256, 128, 1}));
    EXPECT_EQ(mil.train.loss, neural::LossKind::bce_pos_weight);
    EXPECT_EQ(mil.train.patience, 10u);
    EXPECT_EQ(mil.train.epochs, 70u);
    EXPECT_TRUE(mil.instances);
}

TEST(Split, SharedAcrossCallsAndOrderFree) {
    LabelTable l;
    for (int i = 0; i < 100; ++i) {
        l.ids.push_back("P" + std::to_string(i));
        l.labels.push_back(i % 4 ? 1 : 0);
    }
    const auto a = shared_split(l, {0.8, 0.1, 0.1}, 3);
    std::reverse(l.ids.begin(), l.ids.end());
    std::reverse(l.labels.begin(), l.labels.end());
    EXPECT_EQ(shared_split(l, {0.8, 0.1, 0.1}, 3), a);
    std::map<std::string, int> counts;
    for (const auto& [id, tag] : a) ++counts[tag];
    // fractions are rounded per class, so sizes may drift by one
    EXPECT_NEAR(counts["train"], 80, 1);
    EXPECT_NEAR(counts["validation"], 10, 1);
    EXPECT_EQ(counts["train"] + counts["validation"] + counts["test"], 100);
}

TEST(Stages, MissingUpstreamIsActionable) {
    const auto out = fresh_dir("mmfuse_missing_stage");
    auto c = default_config();
    c.out_dir = out;
    EXPECT_NE(error_of([&] { run_fuse(c); }).find("mmfuse synth"), std::string::npos);
    EXPECT_NE(error_of([&] { run_report(c, false); }).find("mmfuse fuse"), std::string::npos);
    EXPECT_NE(error_of([&] { run_train_unimodal(c, {fusion::Modality::clinical, "ehr", std::nullopt}); }).find("mmfuse preprocess"),
              std::string::npos);
    EXPECT_THROW(run_train_unimodal(c, {fusion::Modality::clinical, "nope", std::nullopt}), ValidationError);
    fs::remove_all(out);
}

TEST(Stages, EndToEndSmallRun) {
    const auto out = fresh_dir("mmfuse_e2e");
    const auto c = small_run(out);
    run_synth(c);
    run_preprocess(c);
    const auto ehr = run_train_unimodal(c, {fusion::Modality::clinical, "ehr", std::nullopt});
    const auto mil = run_train_unimodal(c, {fusion::Modality::radiology, "radiology-mil", std::nullopt});
    for (const char* f : {"model.bin", "metrics.json", "probabilities.csv", "embeddings.csv", "history.csv", "manifest.json"})
        EXPECT_TRUE(fs::exists(ehr.dir / f)) << f;
    EXPECT_FALSE(fs::exists(mil.dir / "embeddings.csv"));

    // evaluate on the held-out file reproduces the stored validation metrics
    const auto metrics = nlohmann::json::parse(read_text(ehr.dir / "metrics.json"));
    const auto ev = run_evaluate(c, {ehr.dir / "model.bin", ehr.dir / "heldout_validation.csv", std::nullopt, "ehr"});
    const auto ev_report = nlohmann::json::parse(read_text(ev.dir / "report.json"));
    EXPECT_EQ(ev_report["report"], metrics["validation"]);
    EXPECT_EQ(ev_report["model_config_hash"], config_hash(c));

    const auto fuse = run_fuse(c);
    const std::string first = read_text(fuse.dir / "report.json");
    run_fuse(c);
    EXPECT_EQ(read_text(fuse.dir / "report.json"), first);
    const auto manifest = nlohmann::json::parse(read_text(fuse.dir / "manifest.json"));
    EXPECT_EQ(manifest["config_hash"], config_hash(c));
    EXPECT_EQ(manifest["seed"], c.seed);
    EXPECT_FALSE(manifest["inputs"].empty());

    // every file of every stage is covered by its manifest, and JSON outputs carry the hash too
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (e.path().filename() != "manifest.json") continue;
        const auto m = nlohmann::json::parse(read_text(e.path()));
        EXPECT_EQ(m["config_hash"], config_hash(c)) << e.path();
        std::set<std::string> listed;
        for (const auto& o : m["outputs"]) {
            listed.insert(o["path"].get<std::string>());
            EXPECT_EQ(o["sha256"], sha256_hex(read_text(out / o["path"].get<std::string>())));
        }
        for (const auto& f : fs::directory_iterator(e.path().parent_path())) {
            if (!f.is_regular_file() || f.path().filename() == "manifest.json") continue;
            EXPECT_TRUE(listed.count(fs::relative(f.path(), out).string())) << f.path();
            if (f.path().extension() == ".json")
                EXPECT_EQ(nlohmann::json::parse(read_text(f.path()))["config_hash"], config_hash(c)) << f.path();
        }
    }

    const auto rep = run_report(c, false);
    const auto report = nlohmann::json::parse(read_text(rep.dir / "report.json"));
    EXPECT_EQ(report["rows"].size(), 5u);
    EXPECT_EQ(report["unimodal_runs"].size(), 2u);
    EXPECT_FALSE(report["forced"].get<bool>());

    // a stage produced under another configuration is refused unless forced
    auto other = c;
    other.threshold = 0.4;
    other.fusion.threshold = 0.4;
    run_train_unimodal(other, {fusion::Modality::histology, "baseline", std::nullopt});
    EXPECT_NE(error_of([&] { run_report(c, false); }).find("config"), std::string::npos);
    EXPECT_NO_THROW(run_report(c, true));
    fs::remove_all(out);
}

TEST(Stages, FilterSeriesAndVolumePrep) {
    const auto out = fresh_dir("mmfuse_curate_stage");
    auto c = default_config();
    c.out_dir = out;
    c.inputs.manifest = fs::path(MMFUSE_FIXTURES) / "series_manifest.csv";
    const auto f = run_filter_series(c);
    EXPECT_EQ(read_text(f.dir / "decisions.csv"), read_text(fs::path(MMFUSE_FIXTURES) / "series_decisions.golden.csv"));
    const auto summary = nlohmann::json::parse(read_text(f.dir / "summary.json"));
    EXPECT_EQ(summary["summary"]["total_filtered_scans"], 25);

    EXPECT_THROW(run_volume_prep(c), ValidationError);
    volume::Volume v({2, 3, 3}, 2000.0);
    v.voxels[0] = -158.58;
    fs::create_directories(out / "raw");
    volume::write_raw(v, out / "raw" / "scan.raw");
    c.inputs.volume = out / "raw" / "scan.raw";
    c.volume_shape = {4, 5, 5};
    const auto vp = run_volume_prep(c);
    const auto prepped = volume::read_raw(vp.dir / "scan.raw");
    EXPECT_EQ(prepped.shape, c.volume_shape);
    EXPECT_EQ(prepped.units, "z-score");
    EXPECT_NEAR(prepped.voxels.back(), 3.6421, 1e-4);
    fs::remove_all(out);
}

TEST(Stages, EhrProfileLossFallsOverTenEpochs) {
    const auto out = fresh_dir("mmfuse_ehr_trend");
    auto c = default_config();
    c.out_dir = out;
    c.profiles["ehr"].train.epochs = 10;
    run_synth(c);
    run_preprocess(c);
    const auto run = run_train_unimodal(c, {fusion::Modality::clinical, "ehr", std::nullopt});
    const auto history = read_csv(run.dir / "history.csv");
    std::vector<double> epoch, loss;
    for (const auto& row : history.rows) {
        epoch.push_back(std::stod(row[0]));
        loss.push_back(std::stod(row[1]));
    }
    ASSERT_EQ(epoch.size(), 10u);
    EXPECT_LT(spearman(epoch, loss), 0.0);
    fs::remove_all(out);
}

TEST(Stages, RadiologyPoolingModes) {
    const auto out = fresh_dir("mmfuse_pooling");
    auto c = small_run(out);
    c.fusion.strategies = {fusion::Strategy::early_concat};
    run_synth(c);
    const std::string from_file = read_text(run_fuse(c).dir / "fused_features.csv");

    // the synth stage's patient file is the mean of its scans
    c.radiology_pooling = "mean";
    EXPECT_EQ(read_text(run_fuse(c).dir / "fused_features.csv"), from_file);

    c.radiology_pooling = "max-weight";
    EXPECT_NE(error_of([&] { run_fuse(c); }).find("radiology-mil"), std::string::npos);
    run_train_unimodal(c, {fusion::Modality::radiology, "radiology-mil", std::nullopt});
    const auto fused = ingest_features(run_fuse(c).dir / "fused_features.csv", 0);
    const auto scans = ingest_instances(out / "synth" / "radiology_instances.csv", 0);
    const Eigen::Index off = static_cast<Eigen::Index>(c.synthetic.dims[0]);
    const Eigen::Index w = static_cast<Eigen::Index>(c.synthetic.dims[1]);
    std::size_t checked = 0;
    for (std::size_t r = 0; r < fused.ids.size(); ++r) {
        const Eigen::RowVectorXd v = fused.data.row(static_cast<Eigen::Index>(r)).segment(off, w);
        if (v.isZero()) continue;  // radiology missing for this patient
        bool found = false;
        for (std::size_t s = 0; s < scans.ids.size() && !found; ++s)
            found = scans.ids[s] == fused.ids[r] && scans.data.row(static_cast<Eigen::Index>(s)) == v;
        EXPECT_TRUE(found) << fused.ids[r];
        ++checked;
    }
    EXPECT_GT(checked, 100u);

    auto j = to_json(c);
    j["radiology_pooling"] = "median";
    EXPECT_THROW(config_from_json(j), ValidationError);
}
