#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmfuse/features.hpp"

namespace mmfuse::synthetic {

// Each modality m sees its own latent factor z_m; the label thresholds the sum
// of all three, so every modality holds part of the signal and none holds all.
struct SyntheticSpec {
    std::size_t patients = 600;
    std::array<std::size_t, 3> dims{64, 512, 1024};
    std::array<double, 3> signal{1.0, 1.0, 1.0};  // weight of z_m in the label score
    double complementarity = 1.0;                 // scales every feature shift; 0 gives pure noise
    double feature_shift = 10.0;                  // shift along the informative direction per unit z
    std::size_t informative_dims = 8;
    double label_noise = 0.5;
    std::array<double, 3> missingness{0.0, 0.2, 0.1};
    double positive_rate = 0.77;
    std::size_t max_scans = 3;  // radiology instances per patient
    double scan_noise = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticData {
    std::array<FeatureTable, 3> features;  // clinical, radiology, histology (present patients only)
    FeatureTable radiology_instances;      // one row per scan, ids repeat
    LabelTable labels;
    std::string clinical_records;          // raw tabular records as CSV text
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

inline constexpr std::array<std::string_view, 3> kFeatureFiles{"clinical_features.csv", "radiology_features.csv",
                                                               "wsi_features.csv"};
inline constexpr std::string_view kLabelFile = "labels.csv";
inline constexpr std::string_view kInstanceFile = "radiology_instances.csv";
inline constexpr std::string_view kRecordsFile = "clinical_records.csv";

/// Writes every file into `dir`; returns the written paths.
std::vector<std::filesystem::path> write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

/// Column declarations matching the generated clinical records.
nlohmann::json default_record_columns();

}  // namespace mmfuse::synthetic
