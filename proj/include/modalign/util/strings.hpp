#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace modalign::util {

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split(std::string_view s, char delimiter);
std::string join(const std::vector<std::string>& parts, std::string_view separator);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Shortest decimal representation that round-trips to the same double.
std::string format_number(double value);

/// Reads a whole file; throws std::runtime_error naming the path on failure.
std::string read_file(const std::string& path);

/// Writes atomically enough for fixture use: temp file then rename.
void write_file(const std::string& path, std::string_view contents);

}  // namespace modalign::util
