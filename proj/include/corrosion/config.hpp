#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

namespace corrosion {

// `key = value` lines. Blank lines and lines starting with '#' are skipped;
// whitespace around keys and values is trimmed. Order is preserved.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::istream& in, const std::string& origin = "<input>");
KeyValues read_key_values(const std::filesystem::path& path);

// Value parsers; throw kInvalidConfig naming the key on bad input.
bool parse_bool(const std::string& key, const std::string& value);
std::uint64_t parse_uint(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::vector<std::uint64_t> parse_uint_list(const std::string& key, const std::string& value);

}  // namespace corrosion
