#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcq/common.hpp"

namespace pcq {

/// Flat `key = value` configuration. '#' starts a comment; blank lines are
/// ignored. Later assignments (including command-line overrides) win.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  [[nodiscard]] static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  [[nodiscard]] static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Throws ConfigError naming the first key not in `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

  /// Throws ConfigError("missing required key '<key>'") when absent.
  [[nodiscard]] std::string require(const std::string& key) const;

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] double get_double(const std::string& key, double fallback) const;
  [[nodiscard]] long long get_int(const std::string& key, long long fallback) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list.
  [[nodiscard]] std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key = value` lines; the resolved-config echo.
  [[nodiscard]] std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pcq
