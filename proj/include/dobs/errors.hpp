#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace dobs {

// std::to_string prints fixed six decimals, which turns the magnitudes
// that show up in diagnostics (1e-13 collar widths, 1e11 gains) into
// noise. Shortest-round-trip style for messages instead.
inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Error families map onto CLI exit codes: config 2, hypothesis 3,
// synthesis 4, certificate 5.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct HypothesisError : std::runtime_error {
  explicit HypothesisError(const std::string& m) : std::runtime_error(m) {}
};

struct SynthesisError : std::runtime_error {
  explicit SynthesisError(const std::string& m) : std::runtime_error(m) {}
};

struct CertificateError : std::runtime_error {
  explicit CertificateError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace dobs
