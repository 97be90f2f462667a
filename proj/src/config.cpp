#include "minn/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "minn/error.hpp"

namespace minn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto fail = [&](const std::string& msg) {
      return Error(ErrorCode::ConfigError, source + ":" + std::to_string(lineno) + ": " + msg);
    };
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw fail("empty section name");
      cfg.values_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected key = value");
    if (section.empty()) throw fail("key outside of any section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw fail("empty key");
    if (!cfg.values_[section].emplace(key, trim(std::string_view(line).substr(eq + 1))).second)
      throw fail("duplicate key " + where(section, key));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::check(const Schema& schema) const {
  for (const auto& [section, keys] : values_) {
    const auto it = schema.find(section);
    if (it == schema.end()) throw Error(ErrorCode::ConfigError, source_ + ": unknown section [" + section + "]");
    for (const auto& [key, value] : keys)
      if (!it->second.count(key)) throw Error(ErrorCode::ConfigError, source_ + ": unknown key " + where(section, key));
  }
}

bool Config::has(const std::string& section, const std::string& key) const {
  const auto it = values_.find(section);
  return it != values_.end() && it->second.count(key) > 0;
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw Error(ErrorCode::ConfigError, source_ + ": missing " + where(section, key));
  return values_.at(section).at(key);
}

std::string Config::get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const {
  const std::string text = get_string(section, key);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || errno == ERANGE)
    throw Error(ErrorCode::ConfigError, source_ + ": " + where(section, key) + " expects a number, got '" + text + "'");
  return v;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key) const {
  const std::string text = get_string(section, key);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || *end != '\0' || errno == ERANGE)
    throw Error(ErrorCode::ConfigError, source_ + ": " + where(section, key) + " expects an integer, got '" + text + "'");
  return v;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string text = get_string(section, key);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorCode::ConfigError, source_ + ": " + where(section, key) + " expects true or false, got '" + text + "'");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key) const {
  const std::string text = get_string(section, key);
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = trim(std::string_view(text).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0')
      throw Error(ErrorCode::ConfigError, source_ + ": " + where(section, key) + " expects a list of numbers, got '" + text + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace minn
