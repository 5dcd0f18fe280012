#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace gcav {

using Json = nlohmann::json;

// Canonical text form shared by every JSON artifact: keys sorted, floats
// printed with 9 significant digits, integers verbatim, no insignificant
// whitespace unless `indent` >= 0. Re-parsing and re-dumping canonical text
// reproduces it byte for byte.
std::string canonical_dump(const Json& value, int indent = -1);

// Parses a JSON document; throws FormatError naming `origin` on bad input.
Json parse_json(const std::string& text, const std::string& origin);

Json read_json_file(const std::filesystem::path& path);

// Writes canonical_dump(value, indent) plus a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& value, int indent = -1);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace gcav
