#pragma once

#include "divker/types.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace divker {

/// Flat key = value text with [section] headers. '#' starts a comment.
/// Keys before the first header belong to section "".
///
///   [model]
///   name = mult1d
///   gamma = 0
///
/// Every value read is recorded so the effective configuration (defaults
/// included) can be echoed back as a valid config file.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback);
  double get_double(const std::string& section, const std::string& key, double fallback);
  long long get_int(const std::string& section, const std::string& key, long long fallback);
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback);
  bool get_bool(const std::string& section, const std::string& key, bool fallback);
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback);

  /// Same as get_double but requires a strictly positive value.
  double get_positive(const std::string& section, const std::string& key, double fallback);

  /// Sets (or overrides) a value, as if it appeared in the file.
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Copies every entry of `other` over this one (line numbers kept).
  void merge(const Config& other);

  /// Throws ConfigError naming the first key that was never read.
  void reject_unknown() const;

  /// Effective configuration as config text, sections and keys sorted.
  std::string effective_text() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;  ///< 0 for values set programmatically
    std::string source;
  };
  using Key = std::pair<std::string, std::string>;

  const Entry* find(const std::string& section, const std::string& key) const;
  [[noreturn]] void fail(const Key& key, const Entry& e, const std::string& what) const;
  void record(const std::string& section, const std::string& key, const std::string& value);

  std::map<Key, Entry> entries_;
  std::set<Key> used_;
  std::map<Key, std::string> effective_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);
std::string format_list(const std::vector<double>& v);

}  // namespace divker
