#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dobs/errors.hpp"

namespace dobs {

// Shortest round-trip decimal form; integers print without a point, so
// flag columns stay clean. Reruns of the same computation reproduce the
// same bytes.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvFile {
 public:
  CsvFile(const std::string& path, const std::vector<std::string>& cols)
      : out_(path, std::ios::binary), width_(cols.size()) {
    if (!out_) throw ConfigError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out_ << ',';
      out_ << cols[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& vals) {
    if (vals.size() != width_) throw ConfigError("csv row width mismatch");
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out_ << ',';
      out_ << fmt17(vals[i]);
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  std::size_t width_;
};

}  // namespace dobs
