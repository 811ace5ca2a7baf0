#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mmfuse/io.hpp"

namespace mmfuse::tabular {

struct Missing {
    bool operator==(const Missing&) const = default;
};
using Cell = std::variant<Missing, double, std::string>;

struct ClinicalRecord {
    std::string case_id;
    std::map<std::string, Cell> values;
};

enum class ColumnKind { numeric, ordinal, categorical, identifier, label, split };

/// How a raw column is to be treated. `levels` orders an ordinal column, or
/// fixes the category order of a categorical column (first one is dropped).
struct ColumnDecl {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<std::string> levels;
    bool sentinel_missing = false;  // -1 means "unknown" (staging/mutation columns)
    std::string positive;           // label only: the cell text meaning class 1
};

struct ColumnSchema {
    ColumnDecl decl;
    double median = 0.0;             // numeric
    double min = 0.0;                // numeric: raw values; ordinal: ranks
    double max = 0.0;
    std::string mode;                // categorical and ordinal
    std::vector<std::string> levels; // ordinal order or categorical order
};

struct FeatureMatrix {
    std::vector<std::string> ids;
    std::vector<std::string> columns;
    Eigen::MatrixXd data;
    std::vector<int> labels;               // empty when no label column was declared
    std::vector<std::string> split_tags;   // empty when no split column was declared
    std::size_t unknown_categories = 0;    // unseen categories mapped to the mode
    std::size_t clipped_values = 0;        // scaled values outside [0, 1] clipped
};

/// Reads records from a CSV whose `id_column` holds the case id.
/// Empty cells and NA/NaN/None are missing; numeric text becomes a number.
std::vector<ClinicalRecord> records_from_csv(const CsvTable& table, std::string_view id_column);

std::vector<ColumnSchema> fit_schema(std::span<const ClinicalRecord> records, std::span<const ColumnDecl> decls);

FeatureMatrix transform(std::span<const ClinicalRecord> records, std::span<const ColumnSchema> schemas);

/// Row indices for each split.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

inline constexpr std::array<double, 3> kDefaultSplitFractions{0.70, 0.15, 0.15};

/// Per-class allocation by largest remainder after a seeded shuffle.
/// A zero fraction leaves that split empty.
SplitIndices split_stratified(std::span<const int> labels, const std::array<double, 3>& fractions,
                              std::uint64_t seed);

/// Uses an existing split column ("train"/"val"/"validation"/"test").
SplitIndices split_from_tags(std::span<const std::string> tags);

FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows);

std::string matrix_to_csv(const FeatureMatrix& m, std::string_view id_header = "case_id");

nlohmann::json to_json(std::span<const ColumnSchema> schemas);
std::vector<ColumnSchema> schemas_from_json(const nlohmann::json& j);

ColumnKind parse_kind(std::string_view text);
std::string_view to_string(ColumnKind kind);

/// Declarations from a JSON array: [{"name":..,"kind":..,"levels":[..],"sentinel_missing":bool,"positive":..}]
std::vector<ColumnDecl> decls_from_json(const nlohmann::json& j);

}  // namespace mmfuse::tabular
