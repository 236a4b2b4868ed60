#include "normaug/config.hpp"

#include <stdexcept>

#include "normaug/io.hpp"

namespace naug {

namespace {

std::string trim(const std::string &s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_u64(const std::string &key, const std::string &text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("config: " + key + " expects a nonnegative integer, got '" + text + "'");
  }
  return std::stoull(text);
}

}  // namespace

KeyValues parse_key_values(const std::string &text) {
  KeyValues out;
  std::size_t line_no = 0;
  for (const auto &raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config: line " + std::to_string(line_no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path &path) { return parse_key_values(read_file(path)); }

std::string format_key_values(const KeyValues &values) {
  std::string out;
  for (const auto &[k, v] : values) out += k + "=" + v + "\n";
  return out;
}

const std::string *ConfigReader::find(const std::string &key) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string ConfigReader::get_string(const std::string &key, const std::string &fallback) {
  const auto *v = find(key);
  return v ? *v : fallback;
}

std::size_t ConfigReader::get_size(const std::string &key, std::size_t fallback) {
  const auto *v = find(key);
  return v ? static_cast<std::size_t>(parse_u64(key, *v)) : fallback;
}

std::uint64_t ConfigReader::get_u64(const std::string &key, std::uint64_t fallback) {
  const auto *v = find(key);
  return v ? parse_u64(key, *v) : fallback;
}

double ConfigReader::get_double(const std::string &key, double fallback) {
  const auto *v = find(key);
  if (!v) return fallback;
  try {
    return parse_double(*v);
  } catch (const std::invalid_argument &) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + *v + "'");
  }
}

bool ConfigReader::get_bool(const std::string &key, bool fallback) {
  const auto *v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + *v + "'");
}

std::vector<std::size_t> ConfigReader::get_size_list(const std::string &key, const std::vector<std::size_t> &fallback) {
  const auto *v = find(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const auto &part : split(*v, ',')) out.push_back(static_cast<std::size_t>(parse_u64(key, trim(part))));
  return out;
}

void ConfigReader::require_all_used() const {
  std::string unknown;
  for (const auto &[k, _] : values_) {
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw std::invalid_argument("config: unknown keys: " + unknown);
}

std::string join_sizes(const std::vector<std::size_t> &values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace naug
