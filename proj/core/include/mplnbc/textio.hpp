#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mpln::textio {

/// Shortest decimal that round-trips to the same double; locale independent.
std::string format_double(double value);

/// Locale-independent strict parse of the whole field (surrounding blanks allowed).
std::optional<double> parse_double(std::string_view text);

/// Splits one delimited record, honouring RFC-4180 double quotes.
std::vector<std::string> split_record(std::string_view line, char delimiter);

/// Quotes a field when it contains the delimiter, a quote or a line break.
std::string quote_field(std::string_view field, char delimiter = ',');

std::string read_file(const std::filesystem::path& path);

/// Writes atomically enough for our purposes: full content, binary mode.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace mpln::textio
