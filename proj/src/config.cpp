#include "istt/config.hpp"

#include <fstream>
#include <sstream>

namespace istt {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(line_no) + " is not key=value: " + t);
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + " has empty key");
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

void KvConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open config file for writing: " + path.string());
  os << serialize();
  if (!os) throw IoError("failed writing config file: " + path.string());
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KvConfig::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InputError("missing required config key: " + key);
  return it->second;
}

long KvConfig::get_long(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stol(it->second);
  } catch (const std::exception&) {
    throw InputError("config key " + key + " is not an integer: " + it->second);
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw InputError("config key " + key + " is not a number: " + it->second);
  }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw InputError("config key " + key + " is not an unsigned integer: " + it->second);
  }
}

void KvConfig::set_double(const std::string& key, double value) {
  std::ostringstream os;
  os.precision(17);
  os << value;
  values_[key] = os.str();
}

void KvConfig::merge(const KvConfig& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

}  // namespace istt
