#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/grid.hpp"
#include "dobs/system.hpp"
#include "dobs/trace.hpp"

namespace dobs {

struct PlantTraces {
  TimeGrid grid;
  std::vector<SignalTrace> x;  // one per state
  SignalTrace y;               // alias of x[0]
  SignalTrace u;
};

namespace detail {
inline Vec plant_rhs(const TriangularSystem& sys, double t, const Vec& x, double u) {
  Vec dx(sys.n);
  for (int i = 0; i < sys.n; ++i) {
    double v = sys.f(i, t, x, u);
    if (i + 1 < sys.n) v += sys.a(i, t, x[0], u) * x[i + 1];
    dx[i] = v;
  }
  return dx;
}
}  // namespace detail

// Fixed step RK4 from t0 to the horizon. Aborts when the state escapes
// ten times the declared envelope (forward completeness violation).
inline PlantTraces simulate_plant(const Scenario& sc) {
  validate_scenario(sc);
  const TimeGrid grid = make_grid(sc.t0, sc.horizon, sc.h);
  std::vector<std::vector<double>> xs(static_cast<std::size_t>(sc.sys.n),
                                      std::vector<double>(grid.count));
  const double r0 = sc.x0.norm();
  Vec x = sc.x0;
  for (std::size_t k = 0; k < grid.count; ++k) {
    for (int i = 0; i < sc.sys.n; ++i) xs[static_cast<std::size_t>(i)][k] = x[i];
    if (x.norm() > 10.0 * sc.beta(grid.t(k), r0))
      throw HypothesisError("state escaped the forward completeness envelope at t=" +
                            std::to_string(grid.t(k)));
    if (k + 1 == grid.count) break;
    const double t = grid.t(k), h = sc.h;
    const Vec k1 = detail::plant_rhs(sc.sys, t, x, sc.u(t));
    Vec x2(sc.sys.n), x3(sc.sys.n), x4(sc.sys.n);
    for (int i = 0; i < sc.sys.n; ++i) x2[i] = x[i] + 0.5 * h * k1[i];
    const Vec k2 = detail::plant_rhs(sc.sys, t + 0.5 * h, x2, sc.u(t + 0.5 * h));
    for (int i = 0; i < sc.sys.n; ++i) x3[i] = x[i] + 0.5 * h * k2[i];
    const Vec k3 = detail::plant_rhs(sc.sys, t + 0.5 * h, x3, sc.u(t + 0.5 * h));
    for (int i = 0; i < sc.sys.n; ++i) x4[i] = x[i] + h * k3[i];
    const Vec k4 = detail::plant_rhs(sc.sys, t + h, x4, sc.u(t + h));
    for (int i = 0; i < sc.sys.n; ++i)
      x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  PlantTraces out;
  out.grid = grid;
  out.x.resize(static_cast<std::size_t>(sc.sys.n));
  for (int i = 0; i < sc.sys.n; ++i) {
    out.x[static_cast<std::size_t>(i)].grid = grid;
    out.x[static_cast<std::size_t>(i)].samples = std::move(xs[static_cast<std::size_t>(i)]);
  }
  out.y = out.x[0];
  out.u.grid = grid;
  out.u.samples.resize(grid.count);
  for (std::size_t k = 0; k < grid.count; ++k) out.u.samples[k] = sc.u(grid.t(k));
  return out;
}

struct H1Report {
  bool ok = true;
  double worst_state_margin = 0.0;  // max of |x| - beta over the grid
  double worst_input_margin = 0.0;  // max of |u| - u_bar
  double argmax_t = 0.0;
};

inline H1Report check_H1(const Scenario& sc, const PlantTraces& tr) {
  H1Report rep;
  const double r0 = sc.x0.norm();
  for (std::size_t k = 0; k < tr.grid.count; ++k) {
    const double t = tr.grid.t(k);
    double nrm = 0.0;
    for (const auto& xi : tr.x) nrm += xi.samples[k] * xi.samples[k];
    nrm = std::sqrt(nrm);
    const double sm = nrm - sc.beta(t, r0);
    if (sm > rep.worst_state_margin) {
      rep.worst_state_margin = sm;
      rep.argmax_t = t;
    }
    const double im = std::fabs(tr.u.samples[k]) - sc.u_bar(t);
    rep.worst_input_margin = std::max(rep.worst_input_margin, im);
  }
  rep.ok = rep.worst_state_margin <= 0.0 && rep.worst_input_margin <= 1e-12;
  return rep;
}

// Observability window, all endpoints in observer time (one tau after
// the detected plant run) and aligned to grid nodes.
struct Window {
  int nu = 0;  // 1-based period index
  int m = 0;   // 1-based subinterval index within the period
  double lo = 0.0, hi = 0.0;            // enclosing span
  double core_lo = 0.0, core_hi = 0.0;  // central plateau span
};

inline double effective_delta_a(const Scenario& sc, const PlantTraces& tr) {
  if (sc.delta_a > 0.0) return sc.delta_a;
  // Default: a fixed fraction of the best simultaneous coupling level
  // seen anywhere. Reads the whole trace, hence unsuitable when the
  // causality audits matter; acceptance scenarios pin delta_a instead.
  double best = 0.0;
  for (std::size_t k = 0; k < tr.grid.count; ++k) {
    const double t = tr.grid.t(k);
    double mn = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < sc.sys.n; ++i)
      mn = std::min(mn, std::fabs(sc.sys.a(i, t, tr.y.samples[k], tr.u.samples[k])));
    best = std::max(best, mn);
  }
  if (best <= 0.0) throw HypothesisError("couplings vanish on the whole grid");
  return 1e-3 * best;
}

// Scan each configured period for its first subinterval of length tau
// holding a point where every coupling clears delta_a, then carve the
// longest qualifying grid run inside that subinterval into a window.
inline std::vector<Window> detect_windows(const Scenario& sc, const PlantTraces& tr) {
  const double da = effective_delta_a(sc, tr);
  const int n = sc.sys.n;
  auto min_coupling = [&](std::size_t k) {
    const double t = tr.grid.t(k);
    double mn = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < n; ++i)
      mn = std::min(mn, std::fabs(sc.sys.a(i, t, tr.y.samples[k], tr.u.samples[k])));
    return mn;
  };

  std::vector<Window> out;
  for (std::size_t nu = 1; nu < sc.T.size(); ++nu) {
    const double Tprev = sc.T[nu - 1], Tcur = sc.T[nu];
    if (Tcur > sc.horizon + 1e-12) break;  // period not fully simulated
    const int j_count = static_cast<int>(std::round((Tcur - Tprev) / sc.tau));
    int m = 0;
    std::size_t run_lo = 0, run_hi = 0;  // best run, inclusive indices
    for (int j = 1; j <= j_count && m == 0; ++j) {
      const double slo = Tprev + sc.tau * (j - 1);
      const double shi = Tprev + sc.tau * j;
      // Grid nodes strictly inside the open subinterval.
      std::size_t k0 = tr.grid.floor_index(slo) + 1;
      while (k0 < tr.grid.count && tr.grid.t(k0) <= slo + 1e-12 * sc.tau) ++k0;
      std::size_t best_lo = 0, best_hi = 0, cur_lo = 0;
      bool in_run = false, found = false;
      for (std::size_t k = k0; k < tr.grid.count && tr.grid.t(k) < shi - 1e-12 * sc.tau; ++k) {
        if (min_coupling(k) >= da) {
          if (!in_run) {
            cur_lo = k;
            in_run = true;
          }
          if (!found || k - cur_lo > best_hi - best_lo) {
            best_lo = cur_lo;
            best_hi = k;
            found = true;
          }
        } else {
          in_run = false;
        }
      }
      if (found) {
        m = j;
        run_lo = best_lo;
        run_hi = best_hi;
      }
    }
    if (m == 0)
      throw HypothesisError("no subinterval with active couplings in period " +
                            std::to_string(nu));
    // Trim both sides, snap inward to grid nodes.
    const double t_lo = tr.grid.t(run_lo), t_hi = tr.grid.t(run_hi);
    const double trim = sc.shrink_fraction * (t_hi - t_lo);
    std::size_t w_lo = run_lo, w_hi = run_hi;
    while (w_lo < run_hi && tr.grid.t(w_lo) < t_lo + trim - 1e-12) ++w_lo;
    while (w_hi > run_lo && tr.grid.t(w_hi) > t_hi - trim + 1e-12) --w_hi;
    if (w_hi <= w_lo + 8)
      throw HypothesisError("window in period " + std::to_string(nu) +
                            " spans fewer than 8 grid steps; refine h or widen the gate");
    const double jlo = tr.grid.t(w_lo), jhi = tr.grid.t(w_hi);
    // Central core, snapped inward.
    const double margin = 0.5 * (1.0 - sc.core_fraction) * (jhi - jlo);
    std::size_t c_lo = w_lo, c_hi = w_hi;
    while (c_lo < w_hi && tr.grid.t(c_lo) < jlo + margin - 1e-12) ++c_lo;
    while (c_hi > w_lo && tr.grid.t(c_hi) > jhi - margin + 1e-12) --c_hi;
    if (c_hi <= c_lo + 2)
      throw HypothesisError("window core in period " + std::to_string(nu) + " is degenerate");
    Window w;
    w.nu = static_cast<int>(nu);
    w.m = m;
    w.lo = jlo + sc.tau;
    w.hi = jhi + sc.tau;
    w.core_lo = tr.grid.t(c_lo) + sc.tau;
    w.core_hi = tr.grid.t(c_hi) + sc.tau;
    out.push_back(w);
  }
  if (out.empty()) throw HypothesisError("no complete period inside the horizon");
  return out;
}

}  // namespace dobs
