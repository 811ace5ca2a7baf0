#pragma once

#include <nlohmann/json.hpp>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/io.hpp"

namespace mmfuse::curate {

enum class Modality { CT, MR };

Modality parse_modality(std::string_view text);  // CT, MR or MRI (any case)
std::string_view to_string(Modality m);

struct SeriesRecord {
    std::string patient_id;
    std::string series_uid;
    Modality modality = Modality::CT;
    std::string series_description;
};

/// Named case-insensitive regex. `pattern` is matched with std::regex_search.
struct Pattern {
    std::string name;
    std::string pattern;
    std::regex compiled;
};

Pattern make_pattern(std::string name, std::string pattern);

/// Matches `keywords` (a regex alternation) only when bounded by a
/// non-alphanumeric character or the string ends, so "cor" skips "cortical".
std::string word_pattern(std::string_view keywords);

/// Exclusion wins over inclusion.
struct FilterRuleSet {
    std::string version;
    std::vector<Pattern> include_ct;
    std::vector<Pattern> include_mr;
    std::vector<Pattern> exclude;
};

FilterRuleSet default_rules();

// {"version": "...", "include": {"CT": [{"name":..,"pattern":..}], "MR": [...]}, "exclude": [...]}
FilterRuleSet rules_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FilterRuleSet& rules);

struct Decision {
    bool keep = false;
    std::string reason;  // matched pattern name; "empty" or "no-include-match" for other drops

    bool operator==(const Decision&) const = default;
};

Decision classify(const SeriesRecord& record, const FilterRuleSet& rules);

/// Header: patient_id, series_uid, modality, series_description. Series ids must be unique.
std::vector<SeriesRecord> manifest_from_csv(const CsvTable& table);

std::vector<Decision> classify_all(std::span<const SeriesRecord> manifest, const FilterRuleSet& rules);

/// series_uid,patient_id,modality,decision,pattern
std::string decisions_csv(std::span<const SeriesRecord> manifest, std::span<const Decision> decisions);

struct CohortSummary {
    std::size_t total_scans = 0;
    std::size_t kept_scans = 0;
    double percent_kept = 0.0;
    std::size_t unique_patients = 0;
    double scans_per_patient = 0.0;
    std::size_t ct_kept = 0;
    std::size_t mr_kept = 0;

    bool operator==(const CohortSummary&) const = default;
};

CohortSummary summarize(std::span<const SeriesRecord> manifest, std::span<const Decision> decisions);

/// Rounded the same way as the rendered table (one decimal).
nlohmann::json to_json(const CohortSummary& s);

/// Seven rows: total, filtered, percentage kept, unique patients, average
/// scans per patient, CT scans, MRI scans.
std::string render_summary_table(const CohortSummary& s, std::string_view cohort);

}  // namespace mmfuse::curate
