#pragma once

#include <string>
#include <string_view>

namespace ndha {

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

// Writes `content` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

// Joins `relative` onto `base_dir` unless it is already absolute.
std::string resolve_path(const std::string& base_dir, const std::string& relative);

}  // namespace ndha
