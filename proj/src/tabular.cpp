#include "mmfuse/tabular.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "mmfuse/error.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse::tabular {
namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

Cell parse_cell(std::string_view raw) {
    const std::string t = trim(raw);
    const std::string l = lower(t);
    if (t.empty() || l == "na" || l == "n/a" || l == "nan" || l == "none" || l == "null") return Missing{};
    double v;
    if (parse_double(t, v)) return v;
    return t;
}

std::string cell_text(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    return {};
}

Cell lookup(const ClinicalRecord& r, const ColumnDecl& decl) {
    auto it = r.values.find(decl.name);
    if (it == r.values.end()) return Missing{};
    const Cell& c = it->second;
    if (decl.sentinel_missing) {
        if (const auto* d = std::get_if<double>(&c); d && *d == -1.0) return Missing{};
        if (const auto* s = std::get_if<std::string>(&c); s && trim(*s) == "-1") return Missing{};
    }
    return c;
}

bool is_missing(const Cell& c) { return std::holds_alternative<Missing>(c); }

bool is_feature(ColumnKind k) {
    return k == ColumnKind::numeric || k == ColumnKind::ordinal || k == ColumnKind::categorical;
}

// Most frequent value; ties go to the earliest entry of `order`.
std::string mode_of(const std::vector<std::string>& values, const std::vector<std::string>& order) {
    std::map<std::string, std::size_t> counts;
    for (const auto& v : values) ++counts[v];
    std::string best;
    std::size_t best_count = 0;
    for (const auto& level : order) {
        auto it = counts.find(level);
        if (it != counts.end() && it->second > best_count) {
            best = level;
            best_count = it->second;
        }
    }
    return best;
}

std::size_t rank_of(const ColumnSchema& s, const std::string& value) {
    auto it = std::find(s.levels.begin(), s.levels.end(), value);
    if (it == s.levels.end())
        throw ValidationError(fmt::format("column '{}': ordinal level '{}' is not in the declared order", s.decl.name, value));
    return static_cast<std::size_t>(it - s.levels.begin());
}

}  // namespace

ColumnKind parse_kind(std::string_view text) {
    const auto t = lower(text);
    if (t == "numeric") return ColumnKind::numeric;
    if (t == "ordinal") return ColumnKind::ordinal;
    if (t == "categorical" || t == "binary-categorical" || t == "binary_categorical") return ColumnKind::categorical;
    if (t == "identifier" || t == "id") return ColumnKind::identifier;
    if (t == "label") return ColumnKind::label;
    if (t == "split") return ColumnKind::split;
    throw ValidationError(fmt::format("unknown column kind '{}'", text));
}

std::string_view to_string(ColumnKind kind) {
    switch (kind) {
        case ColumnKind::numeric: return "numeric";
        case ColumnKind::ordinal: return "ordinal";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::identifier: return "identifier";
        case ColumnKind::label: return "label";
        case ColumnKind::split: return "split";
    }
    return "?";
}

std::vector<ClinicalRecord> records_from_csv(const CsvTable& table, std::string_view id_column) {
    const std::size_t id_col = table.column(id_column);
    std::vector<ClinicalRecord> records;
    records.reserve(table.rows.size());
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        ClinicalRecord rec;
        rec.case_id = trim(row[id_col]);
        if (rec.case_id.empty()) throw ValidationError(fmt::format("line {}: empty case id", table.line_numbers[r]));
        if (!seen.insert(rec.case_id).second)
            throw ValidationError(fmt::format("line {}: duplicate case id '{}'", table.line_numbers[r], rec.case_id));
        for (std::size_t c = 0; c < row.size(); ++c)
            if (c != id_col) rec.values.emplace(table.header[c], parse_cell(row[c]));
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<ColumnSchema> fit_schema(std::span<const ClinicalRecord> records, std::span<const ColumnDecl> decls) {
    std::set<std::string> names;
    std::vector<ColumnSchema> out;
    for (const auto& decl : decls) {
        if (!names.insert(decl.name).second) throw ValidationError(fmt::format("column '{}' declared twice", decl.name));
        ColumnSchema s;
        s.decl = decl;
        if (!is_feature(decl.kind)) {
            out.push_back(std::move(s));
            continue;
        }
        std::vector<double> nums;
        std::vector<std::string> texts;
        for (const auto& r : records) {
            const Cell c = lookup(r, decl);
            if (is_missing(c)) continue;
            if (decl.kind == ColumnKind::numeric) {
                const auto* d = std::get_if<double>(&c);
                if (!d)
                    throw ValidationError(fmt::format("column '{}': non-numeric value '{}' for case '{}'", decl.name,
                                                      cell_text(c), r.case_id));
                nums.push_back(*d);
            } else {
                texts.push_back(cell_text(c));
            }
        }
        if (nums.empty() && texts.empty())
            throw ValidationError(fmt::format("column '{}': every value is missing", decl.name));

        switch (decl.kind) {
            case ColumnKind::numeric: {
                std::sort(nums.begin(), nums.end());
                const std::size_t n = nums.size();
                s.median = n % 2 ? nums[n / 2] : 0.5 * (nums[n / 2 - 1] + nums[n / 2]);
                s.min = nums.front();
                s.max = nums.back();
                break;
            }
            case ColumnKind::ordinal: {
                if (decl.levels.empty()) throw ValidationError(fmt::format("column '{}': ordinal without levels", decl.name));
                std::set<std::string> uniq(decl.levels.begin(), decl.levels.end());
                if (uniq.size() != decl.levels.size())
                    throw ValidationError(fmt::format("column '{}': duplicate ordinal levels", decl.name));
                s.levels = decl.levels;
                std::size_t lo = SIZE_MAX, hi = 0;
                for (const auto& t : texts) {
                    const std::size_t rank = rank_of(s, t);
                    lo = std::min(lo, rank);
                    hi = std::max(hi, rank);
                }
                s.min = static_cast<double>(lo);
                s.max = static_cast<double>(hi);
                s.mode = mode_of(texts, s.levels);
                break;
            }
            case ColumnKind::categorical: {
                if (!decl.levels.empty()) {
                    s.levels = decl.levels;
                    for (const auto& t : texts)
                        if (std::find(s.levels.begin(), s.levels.end(), t) == s.levels.end())
                            throw ValidationError(
                                fmt::format("column '{}': category '{}' is not among the declared ones", decl.name, t));
                } else {
                    std::set<std::string> uniq(texts.begin(), texts.end());
                    s.levels.assign(uniq.begin(), uniq.end());
                }
                s.mode = mode_of(texts, s.levels);
                break;
            }
            default: break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

FeatureMatrix transform(std::span<const ClinicalRecord> records, std::span<const ColumnSchema> schemas) {
    FeatureMatrix m;
    for (const auto& s : schemas) {
        switch (s.decl.kind) {
            case ColumnKind::numeric:
            case ColumnKind::ordinal: m.columns.push_back(s.decl.name); break;
            case ColumnKind::categorical:
                for (std::size_t k = 1; k < s.levels.size(); ++k) m.columns.push_back(s.decl.name + "_" + s.levels[k]);
                break;
            default: break;
        }
    }
    m.data.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(m.columns.size()));
    m.data.setZero();

    const auto scale = [&](double v, double lo, double hi) {
        double x = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        if (!std::isfinite(x)) throw NumericError("non-finite value after scaling");
        if (x < 0.0 || x > 1.0) {
            ++m.clipped_values;
            x = std::clamp(x, 0.0, 1.0);
        }
        return x;
    };

    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.case_id.empty()) throw ValidationError(fmt::format("record {} has no case id", r));
        m.ids.push_back(rec.case_id);
        Eigen::Index col = 0;
        const auto row = static_cast<Eigen::Index>(r);
        for (const auto& s : schemas) {
            const Cell c = lookup(rec, s.decl);
            switch (s.decl.kind) {
                case ColumnKind::numeric: {
                    double v = s.median;
                    if (!is_missing(c)) {
                        const auto* d = std::get_if<double>(&c);
                        if (!d)
                            throw ValidationError(fmt::format("column '{}': non-numeric value '{}' for case '{}'",
                                                              s.decl.name, cell_text(c), rec.case_id));
                        v = *d;
                    }
                    m.data(row, col++) = scale(v, s.min, s.max);
                    break;
                }
                case ColumnKind::ordinal: {
                    const std::string level = is_missing(c) ? s.mode : cell_text(c);
                    m.data(row, col++) = scale(static_cast<double>(rank_of(s, level)), s.min, s.max);
                    break;
                }
                case ColumnKind::categorical: {
                    std::string level = is_missing(c) ? s.mode : cell_text(c);
                    auto it = std::find(s.levels.begin(), s.levels.end(), level);
                    if (it == s.levels.end()) {
                        ++m.unknown_categories;
                        it = std::find(s.levels.begin(), s.levels.end(), s.mode);
                    }
                    const auto k = static_cast<Eigen::Index>(it - s.levels.begin());
                    if (k > 0) m.data(row, col + k - 1) = 1.0;
                    col += static_cast<Eigen::Index>(s.levels.size()) - 1;
                    break;
                }
                case ColumnKind::label: {
                    if (is_missing(c)) throw ValidationError(fmt::format("case '{}': missing label", rec.case_id));
                    int y;
                    if (!s.decl.positive.empty()) {
                        y = cell_text(c) == s.decl.positive ? 1 : 0;
                    } else {
                        const auto* d = std::get_if<double>(&c);
                        if (!d || (*d != 0.0 && *d != 1.0))
                            throw ValidationError(fmt::format("case '{}': label '{}' is not 0/1", rec.case_id, cell_text(c)));
                        y = static_cast<int>(*d);
                    }
                    m.labels.push_back(y);
                    break;
                }
                case ColumnKind::split: m.split_tags.push_back(cell_text(c)); break;
                case ColumnKind::identifier: break;
            }
        }
    }
    return m;
}

SplitIndices split_stratified(std::span<const int> labels, const std::array<double, 3>& fractions, std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0) || f > 1.0) throw ValidationError("split fractions must lie in [0, 1]");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError(fmt::format("split fractions sum to {}, not 1", total));
    if (labels.empty()) throw ValidationError("cannot split an empty dataset");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    Rng rng(seed);
    std::array<std::vector<std::size_t>, 3> parts;
    std::string problems;
    for (auto& [cls, members] : by_class) {
        rng.shuffle(members);
        const double n = static_cast<double>(members.size());
        std::array<std::size_t, 3> counts{};
        std::array<double, 3> rem{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = n * fractions[s];
            counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
            rem[s] = exact - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        while (assigned < members.size()) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (rem[s] > rem[best]) best = s;
            ++counts[best];
            rem[best] = -1.0;
            ++assigned;
        }
        for (int s = 0; s < 3; ++s)
            if (fractions[s] > 0.0 && counts[s] == 0) problems += fmt::format(" class {} has {} rows;", cls, members.size());
        std::size_t offset = 0;
        for (int s = 0; s < 3; ++s) {
            parts[s].insert(parts[s].end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
                            members.begin() + static_cast<std::ptrdiff_t>(offset + counts[s]));
            offset += counts[s];
        }
    }
    if (!problems.empty()) {
        std::string counts;
        for (const auto& [cls, members] : by_class) counts += fmt::format(" {}:{}", cls, members.size());
        throw ValidationError(fmt::format("class too small to stratify (class counts{})", counts));
    }
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

SplitIndices split_from_tags(std::span<const std::string> tags) {
    SplitIndices out;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const auto t = lower(trim(tags[i]));
        if (t == "train")
            out.train.push_back(i);
        else if (t == "val" || t == "valid" || t == "validation")
            out.validation.push_back(i);
        else if (t == "test")
            out.test.push_back(i);
        else
            throw ValidationError(fmt::format("row {}: unknown split tag '{}'", i, tags[i]));
    }
    return out;
}

FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix out;
    out.columns = m.columns;
    out.data.resize(static_cast<Eigen::Index>(rows.size()), m.data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = rows[i];
        if (r >= m.ids.size()) throw ValidationError(fmt::format("row index {} out of range", r));
        out.ids.push_back(m.ids[r]);
        out.data.row(static_cast<Eigen::Index>(i)) = m.data.row(static_cast<Eigen::Index>(r));
        if (!m.labels.empty()) out.labels.push_back(m.labels[r]);
        if (!m.split_tags.empty()) out.split_tags.push_back(m.split_tags[r]);
    }
    return out;
}

std::string matrix_to_csv(const FeatureMatrix& m, std::string_view id_header) {
    std::vector<std::string> header{std::string(id_header)};
    header.insert(header.end(), m.columns.begin(), m.columns.end());
    std::string out = csv_row(header);
    for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
        std::vector<std::string> row{m.ids[static_cast<std::size_t>(r)]};
        for (Eigen::Index c = 0; c < m.data.cols(); ++c) row.push_back(format_double(m.data(r, c)));
        out += csv_row(row);
    }
    return out;
}

nlohmann::json to_json(std::span<const ColumnSchema> schemas) {
    auto arr = nlohmann::json::array();
    for (const auto& s : schemas) {
        nlohmann::json j{{"name", s.decl.name},
                         {"kind", to_string(s.decl.kind)},
                         {"sentinel_missing", s.decl.sentinel_missing},
                         {"declared_levels", s.decl.levels},
                         {"positive", s.decl.positive},
                         {"median", s.median},
                         {"min", s.min},
                         {"max", s.max},
                         {"mode", s.mode},
                         {"levels", s.levels}};
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<ColumnSchema> schemas_from_json(const nlohmann::json& j) {
    std::vector<ColumnSchema> out;
    for (const auto& e : j) {
        ColumnSchema s;
        s.decl.name = e.at("name").get<std::string>();
        s.decl.kind = parse_kind(e.at("kind").get<std::string>());
        s.decl.sentinel_missing = e.value("sentinel_missing", false);
        s.decl.levels = e.value("declared_levels", std::vector<std::string>{});
        s.decl.positive = e.value("positive", std::string{});
        s.median = e.value("median", 0.0);
        s.min = e.value("min", 0.0);
        s.max = e.value("max", 0.0);
        s.mode = e.value("mode", std::string{});
        s.levels = e.value("levels", std::vector<std::string>{});
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ColumnDecl> decls_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("column declarations must be a JSON array");
    std::vector<ColumnDecl> out;
    for (const auto& e : j) {
        ColumnDecl d;
        d.name = e.at("name").get<std::string>();
        d.kind = parse_kind(e.value("kind", std::string("numeric")));
        d.levels = e.value("levels", std::vector<std::string>{});
        d.sentinel_missing = e.value("sentinel_missing", false);
        d.positive = e.value("positive", std::string{});
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace mmfuse::tabular
