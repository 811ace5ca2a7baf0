#include "mmfuse/curate.hpp"

#include <fmt/format.h>

#include <cctype>
#include <set>

#include "mmfuse/error.hpp"

namespace mmfuse::curate {
namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool blank(std::string_view s) {
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    return true;
}

const Pattern* first_match(const std::vector<Pattern>& patterns, const std::string& text) {
    for (const auto& p : patterns)
        if (std::regex_search(text, p.compiled)) return &p;
    return nullptr;
}

std::vector<Pattern> patterns_from_json(const nlohmann::json& j) {
    std::vector<Pattern> out;
    for (const auto& e : j) out.push_back(make_pattern(e.at("name").get<std::string>(), e.at("pattern").get<std::string>()));
    return out;
}

nlohmann::json patterns_to_json(const std::vector<Pattern>& ps) {
    auto arr = nlohmann::json::array();
    for (const auto& p : ps) arr.push_back({{"name", p.name}, {"pattern", p.pattern}});
    return arr;
}

std::string one_decimal(double v) { return fmt::format("{:.1f}", v); }

}  // namespace

Modality parse_modality(std::string_view text) {
    const auto u = upper(text);
    if (u == "CT") return Modality::CT;
    if (u == "MR" || u == "MRI") return Modality::MR;
    throw ValidationError(fmt::format("unknown modality '{}' (expected CT or MR)", text));
}

std::string_view to_string(Modality m) { return m == Modality::CT ? "CT" : "MR"; }

Pattern make_pattern(std::string name, std::string pattern) {
    try {
        std::regex re(pattern, std::regex::ECMAScript | std::regex::icase);
        return {std::move(name), std::move(pattern), std::move(re)};
    } catch (const std::regex_error& e) {
        throw ValidationError(fmt::format("rule '{}': pattern does not compile ({})", name, e.what()));
    }
}

std::string word_pattern(std::string_view keywords) {
    return fmt::format("(^|[^a-z0-9])(?:{})(?=[^a-z0-9]|$)", keywords);
}

FilterRuleSet default_rules() {
    FilterRuleSet r;
    r.version = "default-1";
    const auto w = [](std::string name, std::string_view kw) { return make_pattern(std::move(name), word_pattern(kw)); };
    r.exclude = {w("scout", "scout"),       w("localizer", "locali[sz]er"), w("pre-contrast", "pre[-_ ]?contrast"),
                 w("sagittal", "sagittal"), w("sag", "sag"),                 w("coronal", "coronal"),
                 w("cor", "cor"),           w("survey", "survey")};
    r.include_ct = {w("arterial", "arterial"), w("venous", "venous"), w("nephrographic", "nephrographic|nephro"),
                    w("portal", "portal"),     w("delay", "delay|delayed"), w("axial", "axial|ax")};
    r.include_mr = {w("t1", "t1|t1w"), w("t2", "t2|t2w"), w("flair", "flair"),
                    w("dwi", "dwi"),   w("axial", "axial|ax"), w("post", "post")};
    return r;
}

FilterRuleSet rules_from_json(const nlohmann::json& j) {
    FilterRuleSet r;
    try {
        r.version = j.value("version", std::string("unversioned"));
        if (!j.contains("include")) throw ValidationError("filter rules: missing 'include'");
        const auto& inc = j.at("include");
        if (inc.contains("CT")) r.include_ct = patterns_from_json(inc.at("CT"));
        if (inc.contains("MR")) r.include_mr = patterns_from_json(inc.at("MR"));
        if (j.contains("exclude")) r.exclude = patterns_from_json(j.at("exclude"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("filter rules: ") + e.what());
    }
    return r;
}

nlohmann::json to_json(const FilterRuleSet& r) {
    return {{"version", r.version},
            {"include", {{"CT", patterns_to_json(r.include_ct)}, {"MR", patterns_to_json(r.include_mr)}}},
            {"exclude", patterns_to_json(r.exclude)}};
}

Decision classify(const SeriesRecord& record, const FilterRuleSet& rules) {
    const std::string& text = record.series_description;
    if (blank(text)) return {false, "empty"};
    if (const Pattern* p = first_match(rules.exclude, text)) return {false, p->name};
    const auto& include = record.modality == Modality::CT ? rules.include_ct : rules.include_mr;
    if (const Pattern* p = first_match(include, text)) return {true, p->name};
    return {false, "no-include-match"};
}

std::vector<SeriesRecord> manifest_from_csv(const CsvTable& table) {
    const std::size_t pid = table.column("patient_id");
    const std::size_t uid = table.column("series_uid");
    const std::size_t mod = table.column("modality");
    const std::size_t desc = table.column("series_description");
    std::set<std::string> seen;
    std::vector<SeriesRecord> out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        SeriesRecord rec;
        rec.patient_id = row[pid];
        rec.series_uid = row[uid];
        try {
            rec.modality = parse_modality(row[mod]);
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("line {}: {}", table.line_numbers[r], e.what()));
        }
        rec.series_description = row[desc];
        if (rec.series_uid.empty()) throw ValidationError(fmt::format("line {}: empty series_uid", table.line_numbers[r]));
        if (!seen.insert(rec.series_uid).second)
            throw ValidationError(fmt::format("line {}: duplicate series_uid '{}'", table.line_numbers[r], rec.series_uid));
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<Decision> classify_all(std::span<const SeriesRecord> manifest, const FilterRuleSet& rules) {
    std::vector<Decision> out;
    out.reserve(manifest.size());
    for (const auto& r : manifest) out.push_back(classify(r, rules));
    return out;
}

std::string decisions_csv(std::span<const SeriesRecord> manifest, std::span<const Decision> decisions) {
    if (manifest.size() != decisions.size()) throw ValidationError("decisions do not cover the manifest");
    std::string out = csv_row({"series_uid", "patient_id", "modality", "decision", "pattern"});
    for (std::size_t i = 0; i < manifest.size(); ++i)
        out += csv_row({manifest[i].series_uid, manifest[i].patient_id, std::string(to_string(manifest[i].modality)),
                        decisions[i].keep ? "keep" : "drop", decisions[i].reason});
    return out;
}

CohortSummary summarize(std::span<const SeriesRecord> manifest, std::span<const Decision> decisions) {
    if (manifest.size() != decisions.size()) throw ValidationError("decisions do not cover the manifest");
    CohortSummary s;
    s.total_scans = manifest.size();
    std::set<std::string> patients;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (!decisions[i].keep) continue;
        ++s.kept_scans;
        patients.insert(manifest[i].patient_id);
        (manifest[i].modality == Modality::CT ? s.ct_kept : s.mr_kept)++;
    }
    s.unique_patients = patients.size();
    if (s.total_scans) s.percent_kept = 100.0 * static_cast<double>(s.kept_scans) / static_cast<double>(s.total_scans);
    if (s.unique_patients)
        s.scans_per_patient = static_cast<double>(s.kept_scans) / static_cast<double>(s.unique_patients);
    return s;
}

nlohmann::json to_json(const CohortSummary& s) {
    return {{"total_original_scans", s.total_scans},
            {"total_filtered_scans", s.kept_scans},
            {"percentage_kept", one_decimal(s.percent_kept)},
            {"unique_patients", s.unique_patients},
            {"avg_scans_per_patient", one_decimal(s.scans_per_patient)},
            {"ct_scans", s.ct_kept},
            {"mri_scans", s.mr_kept}};
}

std::string render_summary_table(const CohortSummary& s, std::string_view cohort) {
    std::string out = fmt::format("{:<25}{:>12}\n", "Metric", cohort);
    out += std::string(37, '-') + "\n";
    const auto row = [&](std::string_view name, const std::string& v) { out += fmt::format("{:<25}{:>12}\n", name, v); };
    row("Total original scans", std::to_string(s.total_scans));
    row("Total filtered scans", std::to_string(s.kept_scans));
    row("Percentage kept", one_decimal(s.percent_kept) + "%");
    row("Unique patients", std::to_string(s.unique_patients));
    row("Avg scans per patient", one_decimal(s.scans_per_patient));
    row("CT scans", std::to_string(s.ct_kept));
    row("MRI scans", std::to_string(s.mr_kept));
    return out;
}

}  // namespace mmfuse::curate
