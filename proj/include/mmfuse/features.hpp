#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/io.hpp"

namespace mmfuse {

/// Patient-keyed matrix: id in the first column, then the feature vector.
struct FeatureTable {
    std::vector<std::string> ids;
    std::vector<std::string> columns;
    Eigen::MatrixXd data;

    std::size_t width() const { return static_cast<std::size_t>(data.cols()); }
    std::optional<std::size_t> row_of(const std::string& id) const;
    void reindex();  // rebuilds the id lookup after ids change

private:
    std::unordered_map<std::string, std::size_t> index_;
};

/// Checks width (when expected_width > 0), finite numeric cells and unique ids.
/// Errors carry line numbers and both widths.
FeatureTable parse_features(const CsvTable& table, std::size_t expected_width, std::string_view source,
                            bool unique_ids = true);
FeatureTable ingest_features(const std::filesystem::path& path, std::size_t expected_width);

/// Same layout but ids may repeat (one row per scan or slide).
FeatureTable ingest_instances(const std::filesystem::path& path, std::size_t expected_width);

std::string features_csv(const FeatureTable& table, std::string_view id_header = "patient_id");

FeatureTable make_table(std::vector<std::string> ids, Eigen::MatrixXd data, std::string_view column_prefix);

/// patient_id,label with 0/1 labels.
struct LabelTable {
    std::vector<std::string> ids;
    std::vector<int> labels;
};
LabelTable ingest_labels(const std::filesystem::path& path);
LabelTable parse_labels(const CsvTable& table, std::string_view source);
std::string labels_csv(const LabelTable& t);

/// patient_id,probability with values in [0, 1].
struct ProbabilityTable {
    std::vector<std::string> ids;
    std::vector<double> probs;
};
ProbabilityTable ingest_probabilities(const std::filesystem::path& path);
std::string probabilities_csv(const ProbabilityTable& t);

}  // namespace mmfuse
