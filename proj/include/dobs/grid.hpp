#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "dobs/errors.hpp"

namespace dobs {

// Uniform time grid. Nodes are computed as start + k*step (never by
// running accumulation) so node values are reproducible bit for bit.
struct TimeGrid {
  double start = 0.0;
  double step = 0.0;
  std::size_t count = 0;  // node count, >= 2 for a usable grid

  double t(std::size_t k) const { return start + static_cast<double>(k) * step; }
  double end() const { return t(count - 1); }
  double span() const { return end() - start; }

  // Largest k with t(k) <= x, clamped into [0, count-1].
  std::size_t floor_index(double x) const {
    if (x <= start) return 0;
    auto k = static_cast<std::size_t>((x - start) / step);
    if (k >= count) k = count - 1;
    while (k + 1 < count && t(k + 1) <= x) ++k;
    while (k > 0 && t(k) > x) --k;
    return k;
  }

  // Nearest node index if x sits on a node (relative tolerance), else npos.
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t exact_index(double x, double tol_frac = 1e-9) const {
    const double r = (x - start) / step;
    const double k = std::round(r);
    if (k < 0 || k >= static_cast<double>(count)) return npos;
    if (std::fabs(r - k) <= tol_frac * std::max(1.0, std::fabs(r)))
      return static_cast<std::size_t>(k);
    return npos;
  }

  bool contains(double x, double slack = 0.0) const {
    return x >= start - slack && x <= end() + slack;
  }
};

// Grid over [start, end] with step h; end must sit on the grid.
inline TimeGrid make_grid(double start, double end, double h) {
  if (h <= 0.0) throw ConfigError("grid step must be positive");
  if (end <= start) throw ConfigError("grid end must exceed start");
  const double steps = (end - start) / h;
  const double k = std::round(steps);
  if (std::fabs(steps - k) > 1e-9 * std::max(1.0, steps))
    throw ConfigError("grid span " + std::to_string(end - start) +
                      " is not an integer multiple of step " + std::to_string(h));
  TimeGrid g;
  g.start = start;
  g.step = h;
  g.count = static_cast<std::size_t>(k) + 1;
  return g;
}

}  // namespace dobs
