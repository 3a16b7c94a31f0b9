#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/grid.hpp"

namespace dobs {

// Sampled signal on a uniform grid, with an optional delay view.
// value(t) reads the underlying samples at t - delay. Grid hits return
// the stored sample exactly; between nodes a 4 point Lagrange cubic is
// fitted through the surrounding samples (one sided at the ends).
//
// max_node, when set, caps which samples any read may touch. Window
// synthesis sets it so gains provably depend only on plant data strictly
// before the causality cutoff, stencils included.
struct SignalTrace {
  TimeGrid grid;
  std::vector<double> samples;
  double delay = 0.0;
  std::size_t max_node = TimeGrid::npos;

  double t_lo() const { return grid.start + delay; }
  double t_hi() const { return grid.end() + delay; }

  double value(double t) const {
    const double s = t - delay;
    const std::size_t usable = (max_node == TimeGrid::npos)
                                   ? grid.count
                                   : std::min<std::size_t>(grid.count, max_node + 1);
    if (usable < 4) throw SynthesisError("trace read limit leaves fewer than 4 samples");
    const std::size_t ex = grid.exact_index(s);
    if (ex != TimeGrid::npos) {
      if (ex >= usable)
        throw SynthesisError("trace lookup at " + std::to_string(t) +
                             " past the causal read limit");
      return samples[ex];
    }
    if (!grid.contains(s, 1e-9 * std::max(1.0, std::fabs(grid.end()))))
      throw SynthesisError("trace lookup at " + std::to_string(t) +
                           " outside sampled span");
    std::size_t k = grid.floor_index(s);
    if (k >= usable)
      throw SynthesisError("trace lookup at " + std::to_string(t) +
                           " past the causal read limit");
    // Stencil [k-1, k+2] clamped to the readable prefix.
    std::size_t lo = (k == 0) ? 0 : k - 1;
    if (lo + 3 >= usable) lo = usable - 4;
    double num[4], ts[4];
    for (int i = 0; i < 4; ++i) {
      ts[i] = grid.t(lo + static_cast<std::size_t>(i));
      num[i] = samples[lo + static_cast<std::size_t>(i)];
    }
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
      double w = num[i];
      for (int j = 0; j < 4; ++j) {
        if (j == i) continue;
        w *= (s - ts[j]) / (ts[i] - ts[j]);
      }
      acc += w;
    }
    return acc;
  }
};

// Delay view: shift_tau(y, tau)(t) = y(t - tau). Composes additively.
inline SignalTrace shift_tau(const SignalTrace& y, double tau) {
  SignalTrace out = y;
  out.delay += tau;
  return out;
}

}  // namespace dobs
