#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "wce/json.hpp"

namespace wce {

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& doc);

std::string sha256_hex(std::string_view bytes);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace wce
