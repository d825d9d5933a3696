#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "istt/error.hpp"

namespace istt {

// Flat key=value text config. Lines starting with '#' and blank lines are
// ignored; serialization emits sorted keys so echoed configs diff cleanly.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text);
  static KvConfig load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_long(const std::string& key, long value) { values_[key] = std::to_string(value); }
  void set_double(const std::string& key, double value);
  void set_u64(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }

  // overrides win key by key
  void merge(const KvConfig& overrides);

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace istt
