#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dreamnet {

// Flat key=value configuration. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  // Typed lookups; throw ConfigError naming the key on malformed values.
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string format_double(double v);

}  // namespace dreamnet
