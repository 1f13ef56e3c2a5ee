#pragma once

// Small text and file helpers shared by the CSV readers and writers.

#include <filesystem>
#include <string>
#include <vector>

namespace adherence {

std::string trim(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

/// RFC 4180 style: quoted fields may contain commas, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string csv_escape(const std::string& field);

/// Shortest decimal that round-trips to the same double.
std::string format_number(double v);
/// Decimal with at most 9 significant digits.
std::string format_sig9(double v);
/// `v` rounded to 9 significant digits.
double round_sig9(double v);

std::string read_file(const std::filesystem::path& path);
/// Creates parent directories; throws Error when the path is unwritable.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace adherence
