#include "mmfuse/features.hpp"

#include <fmt/format.h>

#include <set>
#include <stdexcept>

#include "mmfuse/error.hpp"

namespace mmfuse {

std::optional<std::size_t> FeatureTable::row_of(const std::string& id) const {
    if (index_.size() != ids.size()) throw std::logic_error("FeatureTable: id index is stale, call reindex()");
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void FeatureTable::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) index_.emplace(ids[i], i);
}

FeatureTable parse_features(const CsvTable& table, std::size_t expected_width, std::string_view source, bool unique_ids) {
    if (table.header.empty()) throw ValidationError(fmt::format("{}: missing header", source));
    const std::size_t width = table.header.size() - 1;
    if (expected_width > 0 && width != expected_width)
        throw ValidationError(fmt::format("{}: expected {} feature columns after the id, found {}", source, expected_width, width));
    if (width == 0) throw ValidationError(fmt::format("{}: no feature columns", source));
    FeatureTable t;
    t.columns.assign(table.header.begin() + 1, table.header.end());
    t.data.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(width));
    std::set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        if (row[0].empty()) throw ValidationError(fmt::format("{}:{}: empty patient id", source, line));
        if (unique_ids && !seen.insert(row[0]).second)
            throw ValidationError(fmt::format("{}:{}: duplicate patient id '{}'", source, line, row[0]));
        t.ids.push_back(row[0]);
        for (std::size_t c = 0; c < width; ++c) {
            double v;
            if (!parse_double(row[c + 1], v))
                throw ValidationError(fmt::format("{}:{}: column '{}' has non-numeric or non-finite value '{}'", source, line,
                                                  table.header[c + 1], row[c + 1]));
            t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    t.reindex();
    return t;
}

FeatureTable ingest_features(const std::filesystem::path& path, std::size_t expected_width) {
    return parse_features(read_csv(path), expected_width, path.string(), true);
}

FeatureTable ingest_instances(const std::filesystem::path& path, std::size_t expected_width) {
    return parse_features(read_csv(path), expected_width, path.string(), false);
}

std::string features_csv(const FeatureTable& t, std::string_view id_header) {
    std::vector<std::string> header{std::string(id_header)};
    header.insert(header.end(), t.columns.begin(), t.columns.end());
    std::string out = csv_row(header);
    std::vector<std::string> row;
    for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
        row.assign(1, t.ids[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < t.data.cols(); ++c) row.push_back(format_double(t.data(r, c)));
        out += csv_row(row);
    }
    return out;
}

FeatureTable make_table(std::vector<std::string> ids, Eigen::MatrixXd data, std::string_view column_prefix) {
    if (ids.size() != static_cast<std::size_t>(data.rows())) throw ValidationError("make_table: ids and rows differ");
    FeatureTable t;
    t.ids = std::move(ids);
    t.data = std::move(data);
    for (Eigen::Index c = 0; c < t.data.cols(); ++c) t.columns.push_back(fmt::format("{}{}", column_prefix, c));
    t.reindex();
    return t;
}

LabelTable parse_labels(const CsvTable& table, std::string_view source) {
    const std::size_t id = table.column("patient_id");
    const std::size_t lab = table.column("label");
    LabelTable t;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = table.line_numbers[r];
        if (!seen.insert(row[id]).second)
            throw ValidationError(fmt::format("{}:{}: duplicate patient id '{}'", source, line, row[id]));
        if (row[lab] != "0" && row[lab] != "1")
            throw ValidationError(fmt::format("{}:{}: label '{}' is not 0/1", source, line, row[lab]));
        t.ids.push_back(row[id]);
        t.labels.push_back(row[lab] == "1" ? 1 : 0);
    }
    return t;
}

LabelTable ingest_labels(const std::filesystem::path& path) { return parse_labels(read_csv(path), path.string()); }

std::string labels_csv(const LabelTable& t) {
    std::string out = "patient_id,label\n";
    for (std::size_t i = 0; i < t.ids.size(); ++i) out += csv_row({t.ids[i], std::to_string(t.labels[i])});
    return out;
}

ProbabilityTable ingest_probabilities(const std::filesystem::path& path) {
    const auto table = read_csv(path);
    const std::size_t id = table.column("patient_id");
    const std::size_t col = table.column("probability");
    ProbabilityTable t;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        double p;
        if (!parse_double(row[col], p) || p < 0.0 || p > 1.0)
            throw ValidationError(fmt::format("{}:{}: probability '{}' outside [0, 1]", path.string(), table.line_numbers[r], row[col]));
        if (!seen.insert(row[id]).second)
            throw ValidationError(fmt::format("{}:{}: duplicate patient id '{}'", path.string(), table.line_numbers[r], row[id]));
        t.ids.push_back(row[id]);
        t.probs.push_back(p);
    }
    return t;
}

std::string probabilities_csv(const ProbabilityTable& t) {
    std::string out = "patient_id,probability\n";
    for (std::size_t i = 0; i < t.ids.size(); ++i) out += csv_row({t.ids[i], format_double(t.probs[i])});
    return out;
}

}  // namespace mmfuse
