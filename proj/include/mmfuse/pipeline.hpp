#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/features.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/neural/mlp.hpp"
#include "mmfuse/neural/train.hpp"
#include "mmfuse/resample.hpp"
#include "mmfuse/synthetic.hpp"

namespace mmfuse::pipeline {

inline constexpr std::string_view kVersion = "0.1.0";

// A network recipe whose input width is taken from the data.
struct Profile {
    std::vector<std::size_t> hidden;
    std::vector<double> dropout;
    std::vector<bool> batch_norm;
    neural::OutputKind output = neural::OutputKind::softmax2;
    double label_smoothing = 0.0;
    neural::TrainConfig train;
    std::optional<std::size_t> embedding_layer;  // hidden layer whose activations are exported
    bool instances = false;                      // trains on scan rows, patient score = max probability
    bool resample = false;                       // applies the run's ResamplePlan to the training rows

    neural::MlpSpec spec(std::size_t input) const;
};

Profile ehr_profile();
Profile radiology_mil_profile();
Profile baseline_profile();

struct Inputs {
    std::optional<std::filesystem::path> clinical_features, radiology_features, histology_features;
    std::optional<std::filesystem::path> clinical_probabilities, radiology_probabilities, histology_probabilities;
    std::optional<std::filesystem::path> radiology_instances, labels, clinical_records, manifest, rules, volume;
    std::optional<std::filesystem::path> radiology_model;  // scan-level classifier for max-weight pooling
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "run";
    Inputs inputs;
    nlohmann::json record_columns = synthetic::default_record_columns();
    std::string id_column = "case_id";
    std::array<double, 3> split_fractions = tabular::kDefaultSplitFractions;
    resample::ResamplePlan resample;
    std::map<std::string, Profile> profiles;
    fusion::ExperimentConfig fusion;
    synthetic::SyntheticSpec synthetic;
    std::array<std::size_t, 3> volume_shape = {56, 448, 448};
    std::string cohort = "cohort";
    double threshold = 0.5;
    // how fuse builds patient-level radiology vectors: "file" reads them as given,
    // "mean" averages the scan-level rows, "max-weight" keeps the scan the radiology model scores highest
    std::string radiology_pooling = "file";
};

RunConfig default_config();
/// Keys absent from `j` keep their defaults; unknown top-level keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
/// Everything that affects results. The output directory is left out so a
/// run moved elsewhere keeps its hash.
nlohmann::json to_json(const RunConfig& c);
std::string config_hash(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

/// Patient -> "train" / "validation" / "test": one stratified split over the
/// label table sorted by id, shared by every stage.
std::map<std::string, std::string> shared_split(const LabelTable& labels, const std::array<double, 3>& fractions,
                                                std::uint64_t seed);

struct StageOutput {
    std::filesystem::path dir;
    std::vector<std::filesystem::path> files;
};

StageOutput run_synth(const RunConfig& c);
StageOutput run_preprocess(const RunConfig& c);
StageOutput run_filter_series(const RunConfig& c);
StageOutput run_volume_prep(const RunConfig& c);

struct UnimodalOptions {
    fusion::Modality modality = fusion::Modality::clinical;
    std::string profile = "baseline";
    std::optional<std::filesystem::path> features;  // overrides the default source
};
StageOutput run_train_unimodal(const RunConfig& c, const UnimodalOptions& o);
std::string unimodal_run_name(const UnimodalOptions& o);

StageOutput run_fuse(const RunConfig& c);

struct EvaluateOptions {
    std::filesystem::path model;
    std::filesystem::path features;
    std::optional<std::filesystem::path> labels;
    std::string name = "default";
};
StageOutput run_evaluate(const RunConfig& c, const EvaluateOptions& o);

struct Scored {
    std::vector<std::string> patients;
    std::vector<double> probs;
    std::vector<int> labels;
    metrics::EvalReport report;
};
/// Patient-level scores of a saved model on a feature (or scan) table.
Scored score_model(const neural::MlpModel& model, const nlohmann::json& metadata, const FeatureTable& table,
                   const LabelTable& labels);

StageOutput run_report(const RunConfig& c, bool force);

}  // namespace mmfuse::pipeline
