#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmfuse;

namespace {

void set_log_level() {
    const char* env = std::getenv("MMFUSE_LOG_LEVEL");
    spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
    spdlog::set_pattern("[%l] %v");
}

void report_outputs(const pipeline::StageOutput& out) {
    spdlog::info("wrote {} file(s) under {}", out.files.size(), out.dir.string());
    for (const auto& f : out.files) spdlog::debug("  {}", f.string());
}

}  // namespace

int main(int argc, char** argv) {
    set_log_level();
    CLI::App app{"Multimodal fusion pipeline: curation, preprocessing, unimodal training and fusion"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    app.set_version_flag("--version", std::string(pipeline::kVersion));

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed (overrides the config)");
    app.add_option("--out-dir", out_dir, "run directory (overrides the config)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic three-modality cohort");
    std::optional<std::size_t> patients;
    std::optional<double> complementarity;
    synth->add_option("--patients", patients, "patient count");
    synth->add_option("--complementarity", complementarity, "signal scale; 0 gives label-independent noise");

    auto* preprocess = app.add_subcommand("preprocess", "clean clinical records into a numeric feature matrix");
    std::string records;
    preprocess->add_option("--records", records, "clinical records CSV");

    auto* filter = app.add_subcommand("filter-series", "classify scan series by description");
    std::string manifest, rules;
    filter->add_option("--manifest", manifest, "series manifest CSV")->check(CLI::ExistingFile);
    filter->add_option("--rules", rules, "rule set JSON (default rules when omitted)")->check(CLI::ExistingFile);

    auto* volume = app.add_subcommand("volume-prep", "clip, normalize and resample a raw volume");
    std::string volume_input;
    std::vector<std::size_t> shape;
    volume->add_option("--input", volume_input, "raw float32 volume with a .json sidecar")->check(CLI::ExistingFile);
    volume->add_option("--shape", shape, "target depth height width")->expected(3);

    auto* train = app.add_subcommand("train-unimodal", "train one modality's classifier");
    std::string modality = "clinical", profile = "baseline", features;
    std::optional<std::size_t> epochs;
    train->add_option("--modality", modality, "clinical | radiology | histology");
    train->add_option("--profile", profile, "ehr | radiology-mil | baseline, or a profile from the config");
    train->add_option("--features", features, "feature file (default: from the upstream stage)")->check(CLI::ExistingFile);
    train->add_option("--epochs", epochs, "override the profile's epoch count");

    auto* fuse = app.add_subcommand("fuse", "unimodal baselines plus fusion on one shared split");
    std::vector<std::string> strategies;
    fuse->add_option("--strategies", strategies, "early-concat, early-mean-pool, late-weighted-sum, late-learned");

    auto* evaluate = app.add_subcommand("evaluate", "score a saved model on a held-out file");
    pipeline::EvaluateOptions eval_opts;
    std::string eval_labels;
    evaluate->add_option("--model", eval_opts.model, "model file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--features", eval_opts.features, "feature file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--labels", eval_labels, "label file (default: the run's labels)")->check(CLI::ExistingFile);
    evaluate->add_option("--name", eval_opts.name, "output subdirectory name");

    auto* report = app.add_subcommand("report", "assemble the unified comparison table");
    bool force = false;
    report->add_flag("--force", force, "combine stages produced under different configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        pipeline::RunConfig cfg = config_path.empty() ? pipeline::default_config() : pipeline::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (patients) cfg.synthetic.patients = *patients;
        if (complementarity) cfg.synthetic.complementarity = *complementarity;
        if (!records.empty()) cfg.inputs.clinical_records = records;
        if (!manifest.empty()) cfg.inputs.manifest = manifest;
        if (!rules.empty()) cfg.inputs.rules = rules;
        if (!volume_input.empty()) cfg.inputs.volume = volume_input;
        if (!shape.empty()) cfg.volume_shape = {shape[0], shape[1], shape[2]};
        if (!strategies.empty()) {
            cfg.fusion.strategies.clear();
            for (const auto& s : strategies) cfg.fusion.strategies.push_back(fusion::parse_strategy(s));
        }
        // re-validate after overrides and keep fusion in step with the top level
        cfg = pipeline::config_from_json([&] {
            auto j = pipeline::to_json(cfg);
            j["out_dir"] = cfg.out_dir.string();
            return j;
        }());
        spdlog::info("config hash {}", pipeline::config_hash(cfg).substr(0, 16));

        pipeline::StageOutput out;
        if (*synth) {
            out = pipeline::run_synth(cfg);
        } else if (*preprocess) {
            out = pipeline::run_preprocess(cfg);
        } else if (*filter) {
            out = pipeline::run_filter_series(cfg);
            std::cout << read_text(out.dir / "summary.txt");
        } else if (*volume) {
            out = pipeline::run_volume_prep(cfg);
        } else if (*train) {
            pipeline::UnimodalOptions o;
            const auto m = fusion::parse_modality(modality);
            if (!m) throw ValidationError(fmt::format("unknown modality '{}'", modality));
            o.modality = *m;
            o.profile = profile;
            if (!features.empty()) o.features = features;
            if (epochs) {
                auto it = cfg.profiles.find(profile);
                if (it == cfg.profiles.end()) throw ValidationError(fmt::format("unknown profile '{}'", profile));
                it->second.train.epochs = *epochs;
            }
            out = pipeline::run_train_unimodal(cfg, o);
        } else if (*fuse) {
            out = pipeline::run_fuse(cfg);
            std::cout << read_text(out.dir / "table.txt");
        } else if (*evaluate) {
            if (!eval_labels.empty()) eval_opts.labels = eval_labels;
            out = pipeline::run_evaluate(cfg, eval_opts);
            std::cout << read_text(out.dir / "table.txt");
        } else if (*report) {
            out = pipeline::run_report(cfg, force);
            std::cout << read_text(out.dir / "table.txt");
        }
        report_outputs(out);
        return 0;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const NumericError& e) {
        spdlog::error("{}", e.what());
        return 3;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 3;
    }
}
