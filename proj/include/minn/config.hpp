#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace minn {

/// Flat key-value document with [section] headers. '#' starts a comment.
/// Every accessor throws Error(ConfigError) naming the section and key.
class Config {
 public:
  using Schema = std::map<std::string, std::set<std::string>>;

  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  /// Rejects sections or keys absent from `schema`.
  void check(const Schema& schema) const;

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const { return values_.count(section) > 0; }

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key) const;
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  /// Comma-separated reals.
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const;

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace minn
