#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace naug {

// Flat key=value configuration; '#' starts a comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string &text);
KeyValues load_key_values(const std::filesystem::path &path);
std::string format_key_values(const KeyValues &values);

// Typed access that remembers which keys were read, so leftovers can be
// reported as unknown.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues &values) : values_(values) {}

  bool has(const std::string &key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string &key, const std::string &fallback);
  std::size_t get_size(const std::string &key, std::size_t fallback);
  std::uint64_t get_u64(const std::string &key, std::uint64_t fallback);
  double get_double(const std::string &key, double fallback);
  bool get_bool(const std::string &key, bool fallback);
  std::vector<std::size_t> get_size_list(const std::string &key, const std::vector<std::size_t> &fallback);

  // Throws std::invalid_argument naming keys that were never read.
  void require_all_used() const;

 private:
  const std::string *find(const std::string &key);
  const KeyValues &values_;
  std::set<std::string> used_;
};

std::string join_sizes(const std::vector<std::size_t> &values);

}  // namespace naug
