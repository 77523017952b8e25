#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace dbpn::cli {

/// Flat `key = value` settings. File values are loaded first; flags given on the command line
/// replace them.
class RunConfig {
 public:
  explicit RunConfig(std::set<std::string> known_keys) : known_(std::move(known_keys)) {}

  /// Reads `path`. Blank lines and `#` comments are ignored. Throws ConfigError on unknown
  /// keys, duplicate keys or malformed lines, IoError if the file cannot be read.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  /// Throws ConfigError naming the key when it is absent.
  std::string require(const std::string& key) const;

  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;

 private:
  std::set<std::string> known_;
  std::map<std::string, std::string> values_;
};

}  // namespace dbpn::cli
