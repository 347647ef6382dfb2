#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eit/tensor.hpp"

// Plain key = value config files: one pair per line, '#' comments, later
// keys override earlier ones. The reader tracks which keys were consumed so
// unknown keys can be rejected instead of silently ignored.

namespace eit {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
  }

  static Config from_text(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
        continue;
      }
      c.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    c.values_.erase("");
    return c;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get_int(const std::string& key, int fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const int v = std::stoi(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects an integer, got '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects a number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + it->second + "'");
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a comma-separated int list");
      }
    }
    if (out.empty()) throw ConfigError("config: " + key + " list is empty");
    return out;
  }

  // call after all reads: any key nobody asked for is a typo
  void reject_unknown() const {
    for (const auto& kv : values_)
      if (!used_.count(kv.first)) throw ConfigError("config: unknown key '" + kv.first + "'");
  }

  std::string echo() const {
    std::string out;
    for (const auto& kv : values_) out += kv.first + " = " + kv.second + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace eit
