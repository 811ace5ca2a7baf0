#include "mmfuse/io.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw ValidationError(fmt::format("missing column '{}'", name));
}

bool CsvTable::has_column(std::string_view name) const {
    for (const auto& h : header)
        if (h == name) return true;
    return false;
}

namespace {

std::vector<std::string> split_line(const std::string& line, std::string_view source, std::size_t line_no) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c != '"') {
                out.back().push_back(c);
            } else if (i + 1 < line.size() && line[i + 1] == '"') {
                out.back().push_back('"');
                ++i;
            } else {
                quoted = false;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back().push_back(c);
        }
    }
    if (quoted) throw ValidationError(fmt::format("{}:{}: unterminated quoted field", source, line_no));
    return out;
}

}  // namespace

CsvTable parse_csv(std::string_view text, std::string_view source) {
    CsvTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty()) continue;
        auto fields = split_line(line, source, line_no);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw ValidationError(fmt::format("{}:{}: expected {} fields, found {}", source, line_no,
                                              table.header.size(), fields.size()));
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(line_no);
    }
    if (!have_header) throw ValidationError(fmt::format("{}: empty file, header row required", source));
    return table;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        const auto& f = fields[i];
        if (f.find_first_of(",\"\n") == std::string::npos) {
            out += f;
        } else {
            out.push_back('"');
            for (char c : f) {
                if (c == '"') out.push_back('"');
                out.push_back(c);
            }
            out.push_back('"');
        }
    }
    out.push_back('\n');
    return out;
}

std::string to_csv(const CsvTable& table) {
    std::string out = csv_row(table.header);
    for (const auto& r : table.rows) out += csv_row(r);
    return out;
}

std::string format_double(double value) { return fmt::format("{}", value); }

bool parse_double(std::string_view cell, double& out) {
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc{} && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace mmfuse
