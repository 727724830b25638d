#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace llmscale {

std::string read_file(const std::filesystem::path& path);
/// Writes atomically-enough for our purposes: creates parent directories and
/// truncates any existing file.
void write_file(const std::filesystem::path& path, std::string_view contents);

using CsvRow = std::vector<std::string>;

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerated.
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);
std::string csv_line(const CsvRow& fields);

/// Fixed-precision decimal rendering used by every text export so that
/// reports do not depend on stream state.
std::string format_fixed(double value, int digits);

std::string trim(std::string_view s);

}  // namespace llmscale
