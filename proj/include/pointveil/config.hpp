#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pointveil/common.hpp"

namespace pointveil {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Flat `key = value` run manifest. Defaults are seeded up front; a config
// file and then command-line flags may overwrite them (flag > file > default).
// Unknown keys are rejected so a typo can't silently fall back to a default.
class RunConfig {
public:
  RunConfig() {
    // clang-format off
    add("task", "cls");
    add("seed", "0");
    add("epochs", "30");
    add("batch", "8");
    add("lr", "0.001");
    add("lambda_s", "1");
    add("lambda_p", "1");
    add("lambda_as", "1");
    add("m", "32");
    add("hidden", "64");
    add("f_blocks", "1");
    add("faithful_single_coupling", "false");
    add("mean_radius", "5");
    add("mean_candidates", "1000");
    add("grad_clip", "10");
    add("divergence_threshold", "1e6");
    add("trace_path", "");
    add("classes", "sphere,cube,cylinder,torus");
    add("points", "256");
    add("clouds_per_class", "50");
    add("jitter", "0.02");
    add("per_part", "false");
    add("epsilon", "0.5,1,5,10");
    add("emd", "exact");
    add("emd_reg", "0.01");
    add("emd_iters", "1000");
    add("downstream_hidden", "64");
    add("downstream_epochs", "20");
    add("downstream_lr", "0.001");
    // clang-format on
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    require(it != values_.end(), errc::config, "config: unknown key '" + key + "'");
    it->second = value;
  }

  bool known(const std::string& key) const { return values_.count(key) != 0; }

  void load(std::istream& in, const std::string& origin = "<stream>") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = detail::trim(line);
      if (s.empty() || s[0] == '#') continue;
      std::size_t eq = s.find('=');
      require(eq != std::string::npos, errc::config,
              "config: " + origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      set(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), errc::io, "config: cannot open " + path);
    load(in, path);
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), errc::config, "config: unknown key '" + key + "'");
    return it->second;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      unsigned long long x = std::stoull(v, &used);
      require(used == v.size(), errc::config, "config: " + key + " is not an integer: " + v);
      return x;
    } catch (const error&) {
      throw;
    } catch (...) {
      fail(errc::config, "config: " + key + " is not an integer: " + v);
    }
  }

  double f64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      require(used == v.size(), errc::config, "config: " + key + " is not a number: " + v);
      return x;
    } catch (const error&) {
      throw;
    } catch (...) {
      fail(errc::config, "config: " + key + " is not a number: " + v);
    }
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail(errc::config, "config: " + key + " is not a boolean: " + v);
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> list_f64(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& s : list(key)) {
      try {
        std::size_t used = 0;
        double x = std::stod(s, &used);
        require(used == s.size(), errc::config, "config: " + key + " entry not a number: " + s);
        out.push_back(x);
      } catch (const error&) {
        throw;
      } catch (...) {
        fail(errc::config, "config: " + key + " entry not a number: " + s);
      }
    }
    return out;
  }

  // full effective config, one key = value per line, fixed order
  void echo(std::ostream& out) const {
    for (const std::string& key : order_) out << key << " = " << values_.at(key) << '\n';
  }

private:
  void add(const std::string& key, const std::string& value) {
    values_[key] = value;
    order_.push_back(key);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace pointveil
