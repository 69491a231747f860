#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fidlab::config {

// Flat key=value document; '#' starts a comment. Unknown keys are rejected
// against the registry of keys a command declares.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      long long v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::runtime_error("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config: key '" + key + "' is not a bool: " + it->second);
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::istringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ','))
      try {
        out.push_back(std::stod(cell));
      } catch (...) {
        throw std::runtime_error("config: key '" + key + "' has a bad list entry: " + cell);
      }
    return out;
  }

  void reject_unknown(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k)) throw std::runtime_error("config: unknown key '" + k + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Resolved view: every known key with its effective value.
  std::string resolved(const std::map<std::string, std::string>& effective) const {
    std::string out;
    for (const auto& [k, v] : effective) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline KeyValues parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value");
    kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

// Global seed fallback: explicit flag > config file > environment.
inline std::uint64_t resolve_seed(const KeyValues& kv, std::uint64_t fallback) {
  if (kv.has("seed")) return std::uint64_t(kv.get_int("seed", 0));
  if (const char* env = std::getenv("FIDELITY_LAB_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw std::runtime_error("FIDELITY_LAB_SEED is not an integer");
    }
  }
  return fallback;
}

}  // namespace fidlab::config
