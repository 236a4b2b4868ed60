#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace naug {

// Shortest-safe decimal text with 17 significant digits; always uses '.'
// whatever the process locale.
std::string format_double(double value);
double parse_double(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep);

// Writes `content` to `path.partial`, then renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, const std::string &content);
std::string read_file(const std::filesystem::path &path);

}  // namespace naug
