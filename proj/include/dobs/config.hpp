#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/system.hpp"

namespace dobs {

// A run is a preset scenario plus overrides from a flat key = value
// document. The scenario inside is fully built and validated.
struct RunConfig {
  std::string preset;
  std::string out_dir = "out";
  int stride = 1;  // every stride-th grid row reaches the CSV artifacts
  Scenario sc;
};

namespace detail {

struct ConfigEntry {
  std::string value;
  int line = 0;
  bool used = false;
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline ConfigError bad_key(const ConfigEntry& e, const std::string& key,
                           const std::string& what) {
  return ConfigError("line " + std::to_string(e.line) + ": " + key + ": " + what);
}

inline double as_double(const ConfigEntry& e, const std::string& key) {
  const std::string v = trim(e.value);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw bad_key(e, key, "expected a number, got '" + e.value + "'");
  return x;
}

inline long as_int(const ConfigEntry& e, const std::string& key) {
  const std::string v = trim(e.value);
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw bad_key(e, key, "expected an integer, got '" + e.value + "'");
  return x;
}

inline std::vector<double> as_list(const ConfigEntry& e, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string v = trim(item);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
      throw bad_key(e, key, "expected comma separated numbers, got '" + item + "'");
    out.push_back(x);
  }
  if (out.empty()) throw bad_key(e, key, "empty list");
  return out;
}

}  // namespace detail

// Parses one configuration document. Schema: one `key = value` per
// line, `#` starts a comment. system.preset selects the scenario
// family; params.* override its numeric knobs; h2.T replaces the
// activation sequence; input.gating reshapes the input gate.
inline RunConfig parse_config_text(const std::string& text) {
  using detail::ConfigEntry;
  std::map<std::string, ConfigEntry> kv;
  {
    std::stringstream ss(text);
    std::string raw;
    int line = 0;
    while (std::getline(ss, raw)) {
      ++line;
      const std::size_t hash = raw.find('#');
      if (hash != std::string::npos) raw.erase(hash);
      const std::string s = detail::trim(raw);
      if (s.empty()) continue;
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line) +
                          ": expected key = value, got '" + s + "'");
      const std::string key = detail::trim(s.substr(0, eq));
      const std::string val = detail::trim(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError("line " + std::to_string(line) + ": empty key");
      if (kv.count(key))
        throw ConfigError("line " + std::to_string(line) + ": duplicate key '" +
                          key + "' (first at line " +
                          std::to_string(kv[key].line) + ")");
      kv[key] = ConfigEntry{val, line, false};
    }
  }

  auto take = [&](const std::string& key) -> ConfigEntry* {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  };

  RunConfig rc;
  {
    ConfigEntry* p = take("system.preset");
    if (!p) throw ConfigError("config is missing system.preset");
    rc.preset = detail::trim(p->value);
  }

  const bool planar = rc.preset == "example1-q1-gated" ||
                      rc.preset == "example1-switching";
  if (planar) {
    Example1Params p;
    if (rc.preset == "example1-switching") {
      p.period = 1.0;
      p.gate = GateSpec{false, 0.205, 0.50, 0.04};
      p.horizon = 70.0;
      p.x0_1 = 3.0;
      p.x0_2 = -4.0;
    }
    if (ConfigEntry* e = take("system.q")) {
      const long q = detail::as_int(*e, "system.q");
      if (q < 1 || q % 2 == 0)
        throw detail::bad_key(*e, "system.q", "must be odd and positive");
      p.q = static_cast<int>(q);
    }
    if (ConfigEntry* e = take("params.tau")) p.tau = detail::as_double(*e, "params.tau");
    if (ConfigEntry* e = take("params.L")) p.L = detail::as_double(*e, "params.L");
    if (ConfigEntry* e = take("params.R")) p.R = detail::as_double(*e, "params.R");
    if (ConfigEntry* e = take("params.h")) p.h = detail::as_double(*e, "params.h");
    if (ConfigEntry* e = take("params.delta_a"))
      p.delta_a = detail::as_double(*e, "params.delta_a");
    if (ConfigEntry* e = take("params.horizon"))
      p.horizon = detail::as_double(*e, "params.horizon");
    if (ConfigEntry* e = take("input.gating")) {
      const std::string v = detail::trim(e->value);
      if (v == "always") {
        p.gate = GateSpec{true, 0.0, 0.0, 0.0};
      } else if (v.rfind("span:", 0) == 0) {
        ConfigEntry span{v.substr(5), e->line, true};
        const std::vector<double> w = detail::as_list(span, "input.gating");
        if (w.size() != 3)
          throw detail::bad_key(*e, "input.gating", "span needs on,off,ramp");
        if (!(w[0] >= 0.0 && w[0] < w[1] && w[2] > 0.0))
          throw detail::bad_key(*e, "input.gating",
                                "need 0 <= on < off and ramp > 0");
        p.gate = GateSpec{false, w[0], w[1], w[2]};
      } else {
        throw detail::bad_key(*e, "input.gating",
                              "expected 'always' or 'span:on,off,ramp'");
      }
    }
    rc.sc = example1_scenario(p);
  } else if (rc.preset == "chain3") {
    Chain3Params p;
    if (ConfigEntry* e = take("params.tau")) p.tau = detail::as_double(*e, "params.tau");
    if (ConfigEntry* e = take("params.L")) p.L = detail::as_double(*e, "params.L");
    if (ConfigEntry* e = take("params.R")) p.R = detail::as_double(*e, "params.R");
    if (ConfigEntry* e = take("params.h")) p.h = detail::as_double(*e, "params.h");
    if (ConfigEntry* e = take("params.delta_a"))
      p.delta_a = detail::as_double(*e, "params.delta_a");
    if (ConfigEntry* e = take("params.horizon"))
      p.horizon = detail::as_double(*e, "params.horizon");
    rc.sc = chain3_scenario(p);
  } else {
    throw ConfigError("unknown preset '" + rc.preset + "'");
  }

  if (detail::ConfigEntry* e = take("h2.T")) {
    rc.sc.T = detail::as_list(*e, "h2.T");
  }
  if (detail::ConfigEntry* e = take("params.x0")) {
    const std::vector<double> v = detail::as_list(*e, "params.x0");
    if (static_cast<int>(v.size()) != rc.sc.sys.n)
      throw detail::bad_key(*e, "params.x0", "needs one value per state");
    for (int i = 0; i < rc.sc.sys.n; ++i) rc.sc.x0[i] = v[static_cast<std::size_t>(i)];
  }
  if (detail::ConfigEntry* e = take("params.seed")) {
    const long s = detail::as_int(*e, "params.seed");
    if (s < 0) throw detail::bad_key(*e, "params.seed", "must be nonnegative");
    rc.sc.seed = static_cast<unsigned long long>(s);
  }
  if (detail::ConfigEntry* e = take("params.cert_samples")) {
    const long s = detail::as_int(*e, "params.cert_samples");
    if (s < 1) throw detail::bad_key(*e, "params.cert_samples", "must be positive");
    rc.sc.cert_samples = static_cast<int>(s);
  }
  if (detail::ConfigEntry* e = take("output.dir")) {
    rc.out_dir = detail::trim(e->value);
    if (rc.out_dir.empty()) throw detail::bad_key(*e, "output.dir", "empty path");
  }
  if (detail::ConfigEntry* e = take("output.stride")) {
    const long s = detail::as_int(*e, "output.stride");
    if (s < 1) throw detail::bad_key(*e, "output.stride", "must be positive");
    rc.stride = static_cast<int>(s);
  }

  for (const auto& [key, entry] : kv)
    if (!entry.used)
      throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" +
                        key + "'");

  validate_scenario(rc.sc);
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace dobs
