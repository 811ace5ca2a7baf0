#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mmfuse {

/// Comma-separated text with a header row. Quoted fields follow RFC 4180.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row

    std::size_t column(std::string_view name) const;  // throws ValidationError when absent
    bool has_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text, std::string_view source = "<memory>");
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_row(const std::vector<std::string>& fields);
std::string to_csv(const CsvTable& table);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Parses a full cell as a finite double; returns false on any trailing text.
bool parse_double(std::string_view cell, double& out);

std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over the target.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace mmfuse
