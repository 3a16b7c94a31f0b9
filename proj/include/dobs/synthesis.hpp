#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dobs/envelopes.hpp"
#include "dobs/errors.hpp"
#include "dobs/grid.hpp"
#include "dobs/linalg.hpp"
#include "dobs/piecewise.hpp"
#include "dobs/plant.hpp"
#include "dobs/system.hpp"
#include "dobs/trace.hpp"

namespace dobs {

// One Lyapunov level on a window: block size m covers the last m states.
// d is the certified decay rate of the block, p the border gain that
// extends the block by one state, phi the injection rate demanded by the
// cone analysis at this level (empty on the top level, where the final
// gain lives on the window support instead).
struct LevelFns {
  int m = 2;
  PiecewiseFn d;
  std::shared_ptr<PiecewiseFn> p;
  PiecewiseFn phi;
  double omega = 1.0;
  double paper_C = 0.0;
  double M_next = 0.0;
};

struct WindowPlan {
  Window w;
  std::vector<double> eps;  // eps[k] is the collar width of level k+2
  double plateau = 0.0;
  double support_lo = 0.0, support_hi = 0.0;
  std::vector<LevelFns> levels;    // levels[k].m == k+2
  std::vector<SymMatrixFn> P_m;    // P_m[k] is the (k+2)x(k+2) block matrix
  PiecewiseFn d_support;           // top-level d restricted to the support
  PiecewiseFn phi_support;         // final injection rate on the support
  double omega_final = 1.0;
  double paper_C_final = 0.0;
};

namespace detail {

inline double guarded(double a) {
  if (std::fabs(a) < 1e-12) throw SynthesisError("coupling vanished inside a window");
  return a;
}

inline std::uint64_t splitmix(std::uint64_t& s) {
  s += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Deterministic unit-direction lattices for the cone probing. dtheta is
// a covering-radius estimate: every unit vector lies within dtheta
// (angle, hence chord) of some lattice point.
inline std::vector<Vec> unit_lattice(int dim, int count, double* dtheta) {
  std::vector<Vec> pts;
  pts.reserve(static_cast<std::size_t>(count));
  if (dim == 2) {
    for (int k = 0; k < count; ++k) {
      const double th = 2.0 * M_PI * k / count;
      Vec w(2);
      w[0] = std::cos(th);
      w[1] = std::sin(th);
      pts.push_back(w);
    }
    *dtheta = M_PI / count;
  } else if (dim == 3) {
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < count; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double az = ga * k;
      Vec w(3);
      w[0] = r * std::cos(az);
      w[1] = r * std::sin(az);
      w[2] = z;
      pts.push_back(w);
    }
    *dtheta = 2.6 / std::sqrt(static_cast<double>(count));
  } else {
    std::uint64_t s = 0x2545F4914F6CDD1Dull ^ static_cast<std::uint64_t>(dim);
    for (int k = 0; k < count; ++k) {
      Vec w(dim);
      double nrm = 0.0;
      do {
        for (int i = 0; i < dim; ++i) {
          const double u1 = (detail::splitmix(s) >> 11) * 0x1.0p-53;
          const double u2 = (detail::splitmix(s) >> 11) * 0x1.0p-53;
          w[i] = std::sqrt(-2.0 * std::log(u1 + 1e-300)) * std::cos(2.0 * M_PI * u2);
        }
        nrm = w.norm();
      } while (nrm < 1e-12);
      for (int i = 0; i < dim; ++i) w[i] /= nrm;
      pts.push_back(w);
    }
    *dtheta = 1.5 * std::pow(std::log(static_cast<double>(count)) / count,
                             1.0 / (dim - 1));
  }
  return pts;
}

namespace detail {

// Sorted, deduplicated breakpoint list covering [lo, hi].
inline std::vector<double> merge_breakpoints(
    std::vector<double> pts, double lo, double hi) {
  pts.push_back(lo);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  const double tol = 1e-12 * std::max(1.0, std::fabs(lo) + std::fabs(hi));
  std::vector<double> out;
  for (double t : pts) {
    if (t < lo - tol || t > hi + tol) continue;
    t = std::clamp(t, lo, hi);
    if (out.empty() || t - out.back() > tol) out.push_back(t);
  }
  if (out.size() < 2 || std::fabs(out.front() - lo) > tol ||
      std::fabs(out.back() - hi) > tol)
    throw SynthesisError("degenerate breakpoint span");
  out.front() = lo;
  out.back() = hi;
  return out;
}

// Probe times for one segment: both ends, grid nodes inside (strided to
// at most kMaxProbes), and the midpoint as a fallback.
inline std::vector<double> segment_probes(double b0, double b1, double grid_start,
                                          double h) {
  constexpr int kMaxProbes = 510;
  std::vector<double> ts;
  ts.push_back(b0);
  const double k0f = std::floor((b0 - grid_start) / h + 1e-9) + 1.0;
  const double k1f = std::ceil((b1 - grid_start) / h - 1e-9) - 1.0;
  if (k1f >= k0f) {
    const long long k0 = static_cast<long long>(k0f);
    const long long k1 = static_cast<long long>(k1f);
    const long long cnt = k1 - k0 + 1;
    const long long stride = std::max(1ll, (cnt + kMaxProbes - 1) / kMaxProbes);
    for (long long k = k0; k <= k1; k += stride) ts.push_back(grid_start + k * h);
  } else {
    ts.push_back(0.5 * (b0 + b1));
  }
  ts.push_back(b1);
  return ts;
}

// Constant levels per segment joined by zero-slope bridges placed inside
// the lower neighbour, so the result stays at or above every level.
inline PiecewiseFn upper_envelope(const std::vector<double>& bounds,
                                  const std::vector<double>& level) {
  const std::size_t k = level.size();
  if (bounds.size() != k + 1) throw SynthesisError("envelope bound/level mismatch");
  if (k == 1) return constant_fn(bounds[0], bounds[1], level[0]);
  struct Zone {
    double lo, hi, v0, v1;
  };
  std::vector<Zone> zones;
  for (std::size_t i = 1; i < k; ++i) {
    const double v0 = level[i - 1], v1 = level[i];
    if (v0 == v1) continue;
    const double wdt =
        0.5 * std::min(bounds[i] - bounds[i - 1], bounds[i + 1] - bounds[i]);
    if (v1 > v0)
      zones.push_back({bounds[i] - wdt, bounds[i], v0, v1});
    else
      zones.push_back({bounds[i], bounds[i] + wdt, v0, v1});
  }
  PiecewiseFn f;
  f.start_at(bounds[0]);
  double cursor = bounds[0];
  const double tiny = 1e-13 * std::max(1.0, std::fabs(bounds[0]) + std::fabs(bounds[k]));
  for (auto& z : zones) {
    const double zlo = std::max(z.lo, cursor);
    if (zlo > cursor + tiny) f.append(zlo, ConstantSeg{z.v0});
    f.append(z.hi, bridge(zlo, z.v0, 0.0, z.hi, z.v1, 0.0));
    cursor = z.hi;
  }
  if (bounds[k] > cursor + tiny)
    f.append(bounds[k], ConstantSeg{level[k - 1]});
  f.finalize();
  return f;
}

// Direction-split alternative to the lattice need. Split a unit w into
// the measured coordinate and a unit kernel direction wk, w = (s, r wk)
// with s^2 + r^2 = 1. The noise term splits the same way,
//   g(w) <= s (|P|_F + |P col0 tail|) + r^2 ghat(wk),
// so with the certified kernel decay margin
//   mbar := -max over unit wk of [wk' Mhat wk + sq ghat(wk)]
// (exact for a one-dimensional kernel, lattice max plus Lipschitz
// deflation otherwise) and B := 2 |M row0 tail| + sq (|P|_F + |P col0|),
//   sup D(w) <= M00 s^2 + B s - mbar (1 - s^2),
// whose ratio against s^2 has a closed-form maximum over 1/s >= 1.
// The margin is taken as the better of the kernel-lattice estimate and
// the structural floor the caller supplies; a huge sentinel is returned
// when neither certifies it positive, and the caller then falls back
// to the lattice need alone.
inline double border_bound(int dim, const Mat& M, const Mat& P, double sq,
                           const std::vector<Vec>& kring, double kdtheta,
                           double floor_val) {
  double lam;
  if (dim == 2) {
    lam = M(1, 1) + sq * std::fabs(P(1, 1));
  } else {
    double mf = 0.0, pf = 0.0;
    for (int i = 1; i < dim; ++i)
      for (int j = 1; j < dim; ++j) {
        mf += M(i, j) * M(i, j);
        pf += P(i, j) * P(i, j);
      }
    mf = std::sqrt(mf);
    pf = std::sqrt(pf);
    double best = -1e300;
    for (const Vec& wk : kring) {
      double form = 0.0;
      for (int i = 1; i < dim; ++i)
        for (int j = 1; j < dim; ++j)
          form += M(i, j) * wk[i - 1] * wk[j - 1];
      double g = 0.0;
      for (int i = 1; i < dim; ++i) {
        double vi = 0.0;
        for (int j = 1; j < dim; ++j) vi += P(i, j) * wk[j - 1];
        for (int j = 1; j <= i; ++j) {
          const double pr = vi * wk[j - 1];
          g += pr * pr;
        }
      }
      best = std::max(best, form + sq * std::sqrt(g));
    }
    lam = best + 2.0 * (mf + sq * pf) * kdtheta;
  }
  const double mbar = std::max(-lam, floor_val);
  if (!(mbar > 0.0)) return 1e300;
  double mrow = 0.0, pcol = 0.0;
  for (int j = 1; j < dim; ++j) mrow += M(0, j) * M(0, j);
  for (int i = 1; i < dim; ++i) pcol += P(i, 0) * P(i, 0);
  const double B = 2.0 * std::sqrt(mrow) + sq * (P.frobenius() + std::sqrt(pcol));
  const double m00 = M(0, 0);
  const double val =
      (B >= 2.0 * mbar) ? m00 + mbar + B * B / (4.0 * mbar) : m00 + B;
  return std::max(val, 0.0);
}

}  // namespace detail

// Max of f over the probe lattice of [lo, hi].
inline double probe_max(const std::function<double(double)>& f, double lo, double hi,
                        double grid_start, double h, std::vector<double> bps) {
  auto bounds = detail::merge_breakpoints(std::move(bps), lo, hi);
  double worst = -1e300;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s)
    for (double t : detail::segment_probes(bounds[s], bounds[s + 1], grid_start, h))
      worst = std::max(worst, f(t));
  return worst;
}

struct LemmaInput {
  int dim = 2;
  const SymMatrixFn* P = nullptr;
  std::function<double(double)> dbar;
  std::vector<std::function<double(double)>> coup;  // dim-1 delayed couplings
  std::function<double(double)> q_radius;
  double lo = 0.0, hi = 0.0;
  std::vector<double> breakpoints;
  double grid_start = 0.0, grid_h = 1e-3;
  int lattice = 4000;
  // Probes never exceed this time. Used on full detection intervals whose
  // right end maps to the causality cutoff sample; the per-segment
  // inflation already covers sampling gaps much wider than one step.
  double probe_cap = 1e300;
  // Certified lower bound on the kernel-block decay margin, when the
  // caller's construction carries one. Empty means no floor.
  std::function<double(double)> kernel_margin;
};

struct LemmaResult {
  PiecewiseFn phi;
  double omega = 1.0;
  double paper_C = 0.0;
  double sup_phi = 0.0;
  bool cone_empty = true;
};

// Injection rate sizing. For unit directions w, the worst drift of the
// quadratic form over the disturbance ball is
//   sup D(w) = w'Mw + sigma_q * |((Pw)_i w_j)_{j<=i}|_2,
//   M = sym(P A0) + Pdot/2 + dbar P,
// and the returned phi satisfies  sup D(w) <= phi * w_1^2  on the span.
// Each probe takes the smaller of two certified covers: the lattice
// maximum inflated by the w-Lipschitz bound times the covering radius,
// and the direction-split border bound, which stays finite when growing
// directions hug the kernel and the sharp ratio blows up. Segment maxima
// are inflated again for the time sampling and joined into a C1 upper
// envelope.
inline LemmaResult lemma_gain(const LemmaInput& in) {
  const int dim = in.dim;
  double dtheta = 0.0;
  const auto lattice = unit_lattice(dim, in.lattice, &dtheta);
  double kdtheta = 0.0;
  std::vector<Vec> kring;
  if (dim - 1 >= 2)
    kring = unit_lattice(dim - 1, dim - 1 == 2 ? 4096 : 20000, &kdtheta);

  auto bounds = detail::merge_breakpoints(in.breakpoints, in.lo, in.hi);
  std::vector<double> levels(bounds.size() - 1, 1.0);

  LemmaResult out;
  out.omega = 1.0;
  double supD_max = 0.0;
  bool any_hit = false;

  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    if (bounds[s] >= in.probe_cap)
      throw SynthesisError("probe cap excludes a whole structural segment");
    double seg_max = 1.0;  // phi floor
    for (double t : detail::segment_probes(bounds[s], bounds[s + 1], in.grid_start,
                                           in.grid_h)) {
      if (t > in.probe_cap) t = in.probe_cap;
      const Mat P = in.P->value(t);
      const Mat Pd = in.P->deriv(t);
      const double db = in.dbar(t);
      double aval[kMaxDim] = {0.0};
      for (int l = 0; l + 1 < dim; ++l) aval[l] = in.coup[static_cast<std::size_t>(l)](t);
      Mat M(dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
          const double pa_ij = (j >= 1) ? P(i, j - 1) * aval[j - 1] : 0.0;
          const double pa_ji = (i >= 1) ? P(j, i - 1) * aval[i - 1] : 0.0;
          M(i, j) = 0.5 * (pa_ij + pa_ji) + 0.5 * Pd(i, j) + db * P(i, j);
        }
      const double sq = in.q_radius(t);
      const double lip = 2.0 * (M.frobenius() + sq * P.frobenius());

      double sharp = 0.0;
      bool probe_hit = false;
      for (const Vec& w : lattice) {
        const Vec Pw = matvec(P, w);
        double g = 0.0;
        for (int i = 0; i < dim; ++i)
          for (int j = 0; j <= i; ++j) {
            const double pr = Pw[i] * w[j];
            g += pr * pr;
          }
        const double supD = quad_form(M, w) + sq * std::sqrt(g);
        if (supD >= 0.0) {
          any_hit = true;
          probe_hit = true;
          const double aw = std::fabs(w[0]);
          out.omega = std::min(out.omega, aw);
          supD_max = std::max(supD_max, supD);
          if (aw - dtheta < 1e-7) {
            sharp = 1e300;  // this hit cannot be covered by the ratio
          } else {
            const double den = aw - dtheta;
            sharp = std::max(sharp, (supD + lip * dtheta) / (den * den));
          }
        }
      }
      if (probe_hit) {
        const double kf = in.kernel_margin ? in.kernel_margin(t) : 0.0;
        const double alt =
            detail::border_bound(dim, M, P, sq, kring, kdtheta, kf);
        const double pn = std::min(sharp, alt);
        if (pn >= 1e299)
          throw SynthesisError(
              "cone of growing directions touches the output kernel at t=" +
              fmt_g(t) + " (dim " + std::to_string(dim) + ", sharp " +
              fmt_g(sharp) + ")");
        seg_max = std::max(seg_max, 1.05 * pn + 1.0);
      }
    }
    levels[s] = 1.02 * seg_max;
    out.sup_phi = std::max(out.sup_phi, levels[s]);
  }

  out.cone_empty = !any_hit;
  if (any_hit) out.paper_C = (1.0 + supD_max) / (out.omega * out.omega);
  out.phi = detail::upper_envelope(bounds, levels);
  return out;
}

// Collar widths. Level 2 takes the tightest of the curvature budget and
// the nesting room; each later level adds an increment with the same
// structure. An increment at or below the grid step cannot be resolved
// by the simulation and aborts.
inline double choose_eps2(const Window& w, double M2, int n, double h) {
  const double e = std::min(
      std::min(1.0 / (2.0 * n * std::max(M2, 1e-300)), 1.0 / (2.0 * n * n)),
      std::min((w.core_lo - w.lo) / 2.0, (w.hi - w.core_hi) / 2.0));
  if (e <= h)
    throw SynthesisError("level-2 collar of width " + fmt_g(e) +
                         " (envelope bound " + fmt_g(M2) +
                         ") is not resolvable at grid step " + fmt_g(h));
  return e;
}

inline double next_eps(const Window& w, double eps_m, double M_next, int n, double h) {
  const double de = std::min(
      std::min(1.0 / (4.0 * n * std::max(M_next, 1e-300)), 1.0 / (4.0 * n * n)),
      std::min((w.core_lo - eps_m - w.lo) / 2.0, (w.hi - w.core_hi - eps_m) / 2.0));
  if (de <= h)
    throw SynthesisError("collar increment " + fmt_g(de) + " (level bound " +
                         fmt_g(M_next) + ") is not resolvable at grid step " +
                         fmt_g(h));
  return eps_m + de;
}

// Level 2: d dips to -sigma_bar outside the collar, holds the plateau on
// the core, and the border gain p makes the designed cancellation
//   p * a_delayed = L (-d - sigma_bar)
// exact wherever p is nonzero. p vanishes identically outside the collar.
inline LevelFns build_level2(int n, double L, const Window& w, double eps2,
                             double plateau, const PiecewiseFn& sigma_bar,
                             std::function<double(double)> acpl, double fd) {
  LevelFns lv;
  lv.m = 2;
  auto sb = std::make_shared<PiecewiseFn>(sigma_bar);
  const double a = w.core_lo, b = w.core_hi;

  PiecewiseFn d;
  d.start_at(w.lo);
  d.append(a - eps2, AnalyticSeg{[sb](double t) { return -sb->value(t); },
                                 [sb](double t) { return -sb->deriv(t); }});
  d.append(a, bridge(a - eps2, -sb->value(a - eps2), -sb->deriv(a - eps2), a,
                     plateau, 0.0));
  d.append(b, ConstantSeg{plateau});
  d.append(b + eps2, bridge(b, plateau, 0.0, b + eps2, -sb->value(b + eps2),
                            -sb->deriv(b + eps2)));
  d.append(w.hi, AnalyticSeg{[sb](double t) { return -sb->value(t); },
                             [sb](double t) { return -sb->deriv(t); }});
  d.finalize();
  lv.d = d;

  auto dp = std::make_shared<PiecewiseFn>(d);
  auto pf = [dp, sb, acpl, L](double t) {
    return L * (-dp->value(t) - sb->value(t)) / detail::guarded(acpl(t));
  };
  auto pdf = [dp, sb, acpl, L, fd](double t) {
    const double av = detail::guarded(acpl(t));
    const double adot = (acpl(t + fd) - acpl(t - fd)) / (2.0 * fd);
    const double num = L * (-dp->value(t) - sb->value(t));
    const double numdot = L * (-dp->deriv(t) - sb->deriv(t));
    return numdot / av - num * adot / (av * av);
  };
  PiecewiseFn p;
  p.start_at(w.lo);
  p.append(a - eps2, ConstantSeg{0.0});
  p.append(b + eps2, AnalyticSeg{pf, pdf});
  p.append(w.hi, ConstantSeg{0.0});
  p.finalize();
  lv.p = std::make_shared<PiecewiseFn>(p);
  return lv;
}

// Extend level m to m+1. Outside the wider collar the new d absorbs the
// previous level's injection rate; inside the old collar it only pays
// the unit margin, and p covers the difference across the new ring:
//   p * a_delayed = (d_m - 1 - phi_m) - d_{m+1}.
inline LevelFns induction_step(int n, double L, const Window& w, double eps_prev,
                               double eps_new, const LevelFns& prev,
                               std::function<double(double)> acpl, double fd) {
  (void)n;
  (void)L;
  LevelFns lv;
  lv.m = prev.m + 1;
  auto dm = std::make_shared<PiecewiseFn>(prev.d);
  auto ph = std::make_shared<PiecewiseFn>(prev.phi);
  const double a = w.core_lo, b = w.core_hi;

  auto outer = [dm, ph](double t) { return dm->value(t) - 1.0 - ph->value(t); };
  auto outer_d = [dm, ph](double t) { return dm->deriv(t) - ph->deriv(t); };
  auto inner = [dm](double t) { return dm->value(t) - 1.0; };
  auto inner_d = [dm](double t) { return dm->deriv(t); };

  PiecewiseFn d;
  d.start_at(w.lo);
  d.append(a - eps_new, AnalyticSeg{outer, outer_d});
  d.append(a - eps_prev,
           bridge(a - eps_new, outer(a - eps_new), outer_d(a - eps_new),
                  a - eps_prev, inner(a - eps_prev), inner_d(a - eps_prev)));
  d.append(b + eps_prev, AnalyticSeg{inner, inner_d});
  d.append(b + eps_new,
           bridge(b + eps_prev, inner(b + eps_prev), inner_d(b + eps_prev),
                  b + eps_new, outer(b + eps_new), outer_d(b + eps_new)));
  d.append(w.hi, AnalyticSeg{outer, outer_d});
  d.finalize();
  lv.d = d;

  auto dn = std::make_shared<PiecewiseFn>(d);
  auto pf = [dn, dm, ph, acpl](double t) {
    return (dm->value(t) - 1.0 - ph->value(t) - dn->value(t)) /
           detail::guarded(acpl(t));
  };
  auto pdf = [dn, dm, ph, acpl, fd](double t) {
    const double av = detail::guarded(acpl(t));
    const double adot = (acpl(t + fd) - acpl(t - fd)) / (2.0 * fd);
    const double num = dm->value(t) - 1.0 - ph->value(t) - dn->value(t);
    const double numdot = dm->deriv(t) - ph->deriv(t) - dn->deriv(t);
    return numdot / av - num * adot / (av * av);
  };
  PiecewiseFn p;
  p.start_at(w.lo);
  p.append(a - eps_new, ConstantSeg{0.0});
  p.append(b + eps_new, AnalyticSeg{pf, pdf});
  p.append(w.hi, ConstantSeg{0.0});
  p.finalize();
  lv.p = std::make_shared<PiecewiseFn>(p);
  return lv;
}

// Assemble the block matrix of size dim from the level border gains.
// The diagonal above each border is the derived view p^2/(L-1) + L of
// the same stored gain, which keeps the determinant identity
// det(P_m - I) = (L-1)^m exact to rounding: the expansion subtracts the
// identical rounded square. The classical det-ratio form collapses to
// 1/(L-1) under that identity.
inline SymMatrixFn level_matrix(int dim, double L, double lo, double hi,
                                const std::vector<LevelFns>& levels) {
  SymMatrixFn P;
  P.n = dim;
  P.entries.assign(static_cast<std::size_t>(dim * (dim + 1) / 2),
                   constant_fn(lo, hi, 0.0));
  P.entry(dim - 1, dim - 1) = constant_fn(lo, hi, L);
  for (int k = 2; k <= dim; ++k) {
    const auto& lf = levels[static_cast<std::size_t>(k - 2)];
    const int r = dim - k;
    P.entry(r, r + 1) = *lf.p;
    auto ps = lf.p;
    const double Lm1 = L - 1.0;
    PiecewiseFn view;
    view.start_at(lo);
    view.append(hi, AnalyticSeg{[ps, Lm1, L](double t) {
                                  const double v = ps->value(t);
                                  return v * v / Lm1 + L;
                                },
                                [ps, Lm1](double t) {
                                  return 2.0 * ps->value(t) * ps->deriv(t) / Lm1;
                                }});
    view.finalize();
    P.entry(r, r) = view;
  }
  return P;
}

// Piecewise decay floor: a deep constant before the first activation has
// completed, then unit steps. Plateaus sit between the midpoint of one
// activation gap and the next activation, bridged with zero end slopes,
// all shifted by the delay. Nondecreasing by construction; past the last
// configured activation the last value is held to the envelope's domain end.
inline PiecewiseFn build_kappa(const std::vector<double>& T, double tau,
                               const PiecewiseFn& sigma_bar, double t_bar0) {
  if (T.size() < 2) throw SynthesisError("activation sequence needs two entries");
  const double tb0 = T[0] + tau;
  if (std::fabs(tb0 - t_bar0) > 1e-9 * std::max(1.0, std::fabs(tb0)))
    throw SynthesisError("start time must equal the first activation plus the delay");
  const double hi_ext = sigma_bar.breakpoint(sigma_bar.segment_count());
  const double k0 = -sigma_bar.integral(tb0, tb0 + (T[1] - T[0]) + tau) - 1.0;

  PiecewiseFn k;
  k.start_at(tb0);
  double cursor = tb0;
  double prev = k0;
  k.append(T[1] + tau, ConstantSeg{k0});
  cursor = T[1] + tau;
  for (std::size_t nu = 1;; ++nu) {
    if (cursor >= hi_ext) break;
    if (nu + 1 >= T.size()) {
      k.append(hi_ext, ConstantSeg{prev});
      break;
    }
    const double mid = 0.5 * (T[nu] + T[nu + 1]) + tau;
    const double val = static_cast<double>(nu);
    k.append(mid, bridge(cursor, prev, 0.0, mid, val, 0.0));
    k.append(T[nu + 1] + tau, ConstantSeg{val});
    prev = val;
    cursor = T[nu + 1] + tau;
  }
  k.finalize();
  return k;
}

// Shared inputs for per-window synthesis. The delayed traces are capped
// so no read (stencils included) can touch plant samples at or past the
// window's causality cutoff b_bar - tau.
struct WindowContext {
  const Scenario* sc = nullptr;
  const PlantTraces* tr = nullptr;
  const BoundEnvelopes* env = nullptr;
  std::vector<double> T_used;
};

inline WindowPlan synthesize_window(const WindowContext& cx, const Window& w) {
  const Scenario& sc = *cx.sc;
  const PlantTraces& tr = *cx.tr;
  const BoundEnvelopes& env = *cx.env;
  const int n = sc.sys.n;
  const double L = sc.L, tau = sc.tau, h = sc.h;

  WindowPlan plan;
  plan.w = w;

  // Causal read cap: strictly before the plant-time image of the window end.
  const std::size_t cut = tr.grid.exact_index(w.hi - tau);
  if (cut == TimeGrid::npos || cut == 0)
    throw SynthesisError("window end does not align with the plant grid");
  auto ytau = std::make_shared<SignalTrace>(shift_tau(tr.y, tau));
  auto utau = std::make_shared<SignalTrace>(shift_tau(tr.u, tau));
  ytau->max_node = cut - 1;
  utau->max_node = cut - 1;

  const TriangularSystem sys = sc.sys;  // value copy keeps plan closures self-contained
  auto coupling = [sys, ytau, utau, tau](int idx0) {
    return std::function<double(double)>([sys, ytau, utau, tau, idx0](double t) {
      return sys.a(idx0, t - tau, ytau->value(t), utau->value(t));
    });
  };

  // Plateau: pays for the envelope drain across the span this window is
  // responsible for, plus the fixed climb margin, spread over the core.
  const std::size_t nu = w.nu;
  double span_int = 0.0;
  if (nu == 1) {
    if (cx.T_used.size() < 3)
      throw SynthesisError("first window needs two more activation times");
    span_int = env.sigma_bar.integral(cx.T_used[0], cx.T_used[2]);
  } else {
    if (nu + 1 >= cx.T_used.size())
      throw SynthesisError("window " + std::to_string(nu) +
                           " needs the next activation time");
    span_int = env.sigma_bar.integral(cx.T_used[nu], cx.T_used[nu + 1]);
  }
  plan.plateau = (span_int + 2.0) / (w.core_hi - w.core_lo) + (n - 2);

  const double M2 = probe_max([&env](double t) { return env.sigma_bar.value(t); },
                              w.lo, w.hi, tr.grid.start, h, {});
  plan.eps.push_back(choose_eps2(w, M2, n, h));
  plan.levels.push_back(build_level2(n, L, w, plan.eps[0], plan.plateau,
                                     env.sigma_bar, coupling(n - 2), h));

  auto sig_ptr = std::make_shared<PiecewiseFn>(env.sigma);
  auto q_radius = [sig_ptr, tau](double t) { return sig_ptr->value(t - tau); };

  auto fn_breakpoints = [](std::initializer_list<const PiecewiseFn*> fns) {
    std::vector<double> out;
    for (const PiecewiseFn* f : fns)
      for (std::size_t i = 0; i <= f->segment_count(); ++i)
        out.push_back(f->breakpoint(i));
    return out;
  };

  for (int m = 2; m < n; ++m) {
    LevelFns& cur = plan.levels.back();
    SymMatrixFn Pm = level_matrix(m, L, w.lo, w.hi, plan.levels);
    auto dmp = std::make_shared<PiecewiseFn>(cur.d);

    LemmaInput li;
    li.dim = m;
    li.P = &Pm;
    li.dbar = [dmp](double t) { return dmp->value(t) - 1.0; };
    for (int l = 0; l + 1 < m; ++l) li.coup.push_back(coupling(n - m + l));
    li.q_radius = q_radius;
    li.lo = w.lo;
    li.hi = w.hi;
    li.breakpoints = fn_breakpoints({&cur.d, cur.p.get()});
    li.grid_start = tr.grid.start;
    li.grid_h = h;
    li.lattice = sc.sphere_points_per_dim * m;
    li.probe_cap = w.hi - h;
    // For dim >= 3 the kernel block is the previous level's certified
    // drift bound shifted down by the ladder's unit gap, and the metric
    // dominates the identity, so the margin is at least one.
    if (m >= 3) li.kernel_margin = [](double) { return 1.0; };
    LemmaResult lr = lemma_gain(li);
    cur.phi = lr.phi;
    cur.omega = lr.omega;
    cur.paper_C = lr.paper_C;

    auto php = std::make_shared<PiecewiseFn>(cur.phi);
    cur.M_next = probe_max(
        [dmp, php](double t) {
          return std::fabs(dmp->value(t) - 1.0) + php->value(t);
        },
        w.lo, w.hi, tr.grid.start, h,
        fn_breakpoints({&cur.d, &cur.phi}));

    plan.eps.push_back(next_eps(w, plan.eps.back(), cur.M_next, n, h));
    plan.levels.push_back(induction_step(
        n, L, w, plan.eps[static_cast<std::size_t>(m - 2)],
        plan.eps[static_cast<std::size_t>(m - 1)], cur, coupling(n - m - 1), h));
  }

  // Ladder self-checks: strictly increasing, capped, nested inside J.
  for (std::size_t k = 0; k < plan.eps.size(); ++k) {
    const double cap = (k + 2.0) / (4.0 * n * n);
    if (k > 0 && plan.eps[k] <= plan.eps[k - 1])
      throw SynthesisError("collar widths failed to increase");
    if (plan.eps[k] > cap + 1e-12)
      throw SynthesisError("collar width exceeded its budget");
  }
  const double en = plan.eps.back();
  plan.support_lo = w.core_lo - en;
  plan.support_hi = w.core_hi + en;
  if (!(w.lo < plan.support_lo && plan.support_hi < w.hi))
    throw SynthesisError("window support escaped its detection interval");

  for (int mm = 2; mm <= n; ++mm)
    plan.P_m.push_back(level_matrix(mm, L, w.lo, w.hi, plan.levels));

  plan.d_support = restrict_fn(plan.levels.back().d, plan.support_lo, plan.support_hi);

  // Final injection rate on the support, with the summable margin.
  auto dsup = std::make_shared<PiecewiseFn>(plan.d_support);
  LemmaInput fi;
  fi.dim = n;
  fi.P = &plan.P_m.back();
  fi.dbar = [dsup](double t) {
    return dsup->value(t) - 2.0 / (M_PI * (1.0 + t * t));
  };
  for (int l = 0; l + 1 < n; ++l) fi.coup.push_back(coupling(l));
  fi.q_radius = q_radius;
  fi.lo = plan.support_lo;
  fi.hi = plan.support_hi;
  fi.breakpoints = fn_breakpoints({&plan.d_support, plan.levels.back().p.get()});
  fi.grid_start = tr.grid.start;
  fi.grid_h = h;
  fi.lattice = sc.sphere_points_per_dim * n;
  // On the support the border gain cancels the previous level's drift
  // bound exactly, so the kernel block keeps at least the summable
  // margin subtracted from the rate above.
  fi.kernel_margin = [](double t) { return 2.0 / (M_PI * (1.0 + t * t)); };
  LemmaResult fr = lemma_gain(fi);
  plan.phi_support = fr.phi;
  plan.omega_final = fr.omega;
  plan.paper_C_final = fr.paper_C;
  return plan;
}

// Full schedule: identity-scaled metric and envelope decay off the
// supports, the window constructions on them.
struct GainSchedule {
  int n = 0;
  double L = 2.0, tau = 0.0;
  double R = 0.0, xi = 0.0;  // xi is filled in once the start threshold is known
  double t_bar0 = 0.0, horizon = 0.0;
  BoundEnvelopes env;
  PiecewiseFn kappa;
  std::vector<WindowPlan> plans;
  TriangularSystem sys;
  std::shared_ptr<SignalTrace> ytau, utau;  // uncapped delayed traces

  int find_window(double t) const {
    for (std::size_t i = 0; i < plans.size(); ++i)
      if (plans[i].w.lo <= t && t <= plans[i].w.hi) return static_cast<int>(i);
    return -1;
  }
  int find_support(double t) const {
    for (std::size_t i = 0; i < plans.size(); ++i)
      if (plans[i].support_lo <= t && t <= plans[i].support_hi)
        return static_cast<int>(i);
    return -1;
  }
  int window_id(double t) const {
    const int i = find_support(t);
    return i < 0 ? 0 : static_cast<int>(plans[static_cast<std::size_t>(i)].w.nu);
  }

  Mat P(double t) const {
    const int i = find_window(t);
    if (i < 0) {
      Mat m = Mat::identity(n);
      for (int k = 0; k < n; ++k) m(k, k) = L;
      return m;
    }
    return plans[static_cast<std::size_t>(i)].P_m.back().value(t);
  }
  Mat Pdot(double t) const {
    const int i = find_window(t);
    if (i < 0) return Mat(n);
    return plans[static_cast<std::size_t>(i)].P_m.back().deriv(t);
  }
  double d(double t) const {
    const int i = find_support(t);
    if (i < 0) return -env.sigma_bar.value(t);
    return plans[static_cast<std::size_t>(i)].d_support.value(t);
  }
  double d_bar(double t) const {
    const int i = find_support(t);
    if (i < 0) return -env.sigma_bar.value(t);
    return plans[static_cast<std::size_t>(i)].d_support.value(t) -
           2.0 / (M_PI * (1.0 + t * t));
  }
  double phi(double t) const {
    const int i = find_support(t);
    if (i < 0) return 0.0;
    return plans[static_cast<std::size_t>(i)].phi_support.value(t);
  }

  // Exact piecewise integrals: envelope drain everywhere, corrected on
  // each support overlap. Additive by construction.
  double integral_d(double a, double b) const {
    double acc = -(env.sigma_bar.anti(b) - env.sigma_bar.anti(a));
    for (const auto& pl : plans) {
      const double u = std::max(a, pl.support_lo), v = std::min(b, pl.support_hi);
      if (v > u)
        acc += pl.d_support.integral(u, v) + env.sigma_bar.integral(u, v);
    }
    return acc;
  }
  double integral_d_bar(double a, double b) const {
    double acc = integral_d(a, b);
    for (const auto& pl : plans) {
      const double u = std::max(a, pl.support_lo), v = std::min(b, pl.support_hi);
      if (v > u) acc -= (2.0 / M_PI) * (std::atan(v) - std::atan(u));
    }
    return acc;
  }
};

inline GainSchedule assemble_full(const Scenario& sc, const PlantTraces& tr,
                                  const BoundEnvelopes& env,
                                  const std::vector<Window>& windows,
                                  const std::vector<double>& T_used) {
  if (windows.empty()) throw SynthesisError("no windows to synthesize");
  GainSchedule g;
  g.n = sc.sys.n;
  g.L = sc.L;
  g.tau = sc.tau;
  g.R = sc.R;
  g.t_bar0 = T_used.front() + sc.tau;
  g.horizon = sc.horizon;
  g.env = env;
  g.sys = sc.sys;
  g.kappa = build_kappa(T_used, sc.tau, env.sigma_bar, g.t_bar0);
  g.ytau = std::make_shared<SignalTrace>(shift_tau(tr.y, sc.tau));
  g.utau = std::make_shared<SignalTrace>(shift_tau(tr.u, sc.tau));

  WindowContext cx{&sc, &tr, &env, T_used};
  for (const Window& w : windows) g.plans.push_back(synthesize_window(cx, w));

  for (std::size_t i = 0; i + 1 < g.plans.size(); ++i)
    if (g.plans[i].w.hi > g.plans[i + 1].w.lo)
      throw SynthesisError("window intervals overlap");

  // Every published function must be C1 across its joints; the collar
  // design makes the metric meet diag{L} with zero slope at support ends.
  auto check_fn = [](const PiecewiseFn& f, const char* what) {
    double where = 0.0;
    const double gap = f.max_joint_gap(true, &where);
    if (gap > 1e-9)
      throw SynthesisError(std::string(what) + " has a joint discontinuity of " +
                           fmt_g(gap) + " at t=" + fmt_g(where));
  };
  for (const auto& pl : g.plans) {
    for (const auto& e : pl.P_m.back().entries) check_fn(e, "metric entry");
    check_fn(pl.d_support, "support decay rate");
    check_fn(pl.phi_support, "support injection rate");
    for (const auto& lv : pl.levels) {
      check_fn(lv.d, "level decay rate");
      check_fn(*lv.p, "border gain");
    }
  }
  check_fn(g.kappa, "decay floor");
  return g;
}

// End-to-end synthesis for a prepared plant run.
inline GainSchedule synthesize(const Scenario& sc, const PlantTraces& tr) {
  double max_gap = 0.0;
  for (std::size_t i = 0; i + 1 < sc.T.size(); ++i)
    max_gap = std::max(max_gap, sc.T[i + 1] - sc.T[i]);
  const double xi_box = (sc.xi_mode == "fixed") ? sc.xi_value : 0.0;
  const BoundEnvelopes env = build_envelopes(
      sc, sc.t0, sc.horizon + max_gap + 2.0 * sc.tau + 1.0, xi_box);
  const auto windows = detect_windows(sc, tr);
  return assemble_full(sc, tr, env, windows, sc.T);
}

}  // namespace dobs
