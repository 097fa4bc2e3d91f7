#include "corrosion/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "corrosion/error.hpp"

namespace corrosion {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* want) {
  throw Error(ErrorCode::kInvalidConfig, key + ": expected " + want + ", got '" + value + "'");
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig,
                  origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::kInvalidConfig, origin + ":" + std::to_string(lineno) + ": empty key");
    }
    out.emplace_back(std::move(key), trim(t.substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return parse_key_values(f, path.string());
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad(key, value, "a boolean");
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  if (value.empty() || value[0] == '-') bad(key, value, "a non-negative integer");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || *end != '\0') bad(key, value, "a non-negative integer");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || errno != 0 || *end != '\0') bad(key, value, "a number");
  return v;
}

std::vector<std::uint64_t> parse_uint_list(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

}  // namespace corrosion
