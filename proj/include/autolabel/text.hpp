#pragma once

// Small text helpers shared by the line-oriented file formats.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace autolabel::text {

/// Shortest decimal that parses back to exactly `value`.
std::string format_double(double value);

/// Fixed-point with `decimals` digits after the point.
std::string format_fixed(double value, int decimals);

/// Whole-token parse; nullopt on trailing garbage, empty input, or non-finite.
std::optional<double> parse_double(std::string_view token);
std::optional<long long> parse_int(std::string_view token);

std::vector<std::string_view> split(std::string_view line, char sep);
/// Splits on runs of spaces/tabs, dropping empty tokens.
std::vector<std::string_view> split_ws(std::string_view line);

std::string_view trim(std::string_view s);

/// Splits into lines, stripping one trailing '\r' from each. A final newline
/// does not produce an extra empty line.
std::vector<std::string_view> lines(std::string_view text);

std::string read_file(const std::string& path);
/// Writes through a temporary sibling and renames, so readers never observe
/// a partial file.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace autolabel::text
