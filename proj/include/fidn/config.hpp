#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace fidn {

struct KeyValueLine {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// `key = value` lines; '#' starts a comment; blank lines ignored. A line
// without '=' is a FormatError naming the line.
std::vector<KeyValueLine> parse_key_values(const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

std::uint64_t parse_u64(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

// Flat run configuration. Resolution order: built-in default, then config
// file, then command-line overrides. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, std::string>& defaults();

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text);
  void set(const std::string& key, const std::string& value);  // override
  bool explicitly_set(const std::string& key) const { return explicit_.contains(key); }

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Every key with its resolved value, sorted, one `key = value` per line.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace fidn
