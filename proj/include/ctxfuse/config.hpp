#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxfuse {

// Configuration / usage problems; the CLI maps these to exit code 1,
// anything else thrown to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value store with dotted namespaces. Lines starting with '#' and
// blank lines are ignored; a persisted snapshot re-parses to an equal store.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_lines(const std::vector<std::string>& lines);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // refuses any stored key outside `known`
  void check_known(const std::set<std::string>& known) const;

  std::vector<std::string> keys() const;
  std::string render() const;  // sorted "key=value" lines
  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace ctxfuse
