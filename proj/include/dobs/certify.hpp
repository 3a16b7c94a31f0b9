#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dobs/linalg.hpp"
#include "dobs/plant.hpp"
#include "dobs/synthesis.hpp"

namespace dobs {

// Worst margins over the deterministic grid sweep plus the Monte-Carlo
// direction draws. A margin convention: quantities named *_slack are
// "how far on the safe side", so negative beyond tolerance is a failure;
// worst_* are signed violation measures, positive beyond tolerance fails.
struct CertificateReport {
  bool ok = true;
  int samples = 0;
  int violations = 0;
  double min_eig_slack = 1e300;      // min over grid of (min eig P - 1)
  double p0_norm_excess = -1e300;    // |P(t_bar0)| - L
  double min_decay_gap = 1e300;      // min of (integral d - kappa), must stay > 0
  double min_margin_gap = 1e300;     // min of (integral d_bar - kappa + 1)
  double worst_kernel = -1e300;      // directional inequality, e in ker H / off support
  double worst_full = -1e300;        // full injected inequality, all e
  double worst_det_rel = 0.0;        // det identity, relative
  double min_collar_slack = 1e300;   // min of (integral_S d_m + m/n)
  double worst_off_collar = -1e300;  // max of (d_m + sigma_bar) outside the collar
  double min_phi = 1e300;            // min of phi over supports
  double worst_joint_gap = 0.0;
  double worst_kappa_exact = 0.0;    // max |kappa(T_nu + tau) - (nu - 1)|
  std::vector<std::string> failures;

  void fail(const std::string& msg) {
    ok = false;
    ++violations;
    if (failures.size() < 32) failures.push_back(msg);
  }
};

namespace detail {

// Closed-form supremum over the disturbance ball of the drift form at
// (t, e): the ball enters affinely, so the supremum is the base value
// plus radius times the gradient norm over the lower-triangle pattern.
inline double drift_sup(const Mat& P, const Mat& Pd, const double* aval, int dim,
                        double rate, double radius, const Vec& e) {
  Mat M(dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      const double pa_ij = (j >= 1) ? P(i, j - 1) * aval[j - 1] : 0.0;
      const double pa_ji = (i >= 1) ? P(j, i - 1) * aval[i - 1] : 0.0;
      M(i, j) = 0.5 * (pa_ij + pa_ji) + 0.5 * Pd(i, j) + rate * P(i, j);
    }
  const Vec Pe = matvec(P, e);
  double g = 0.0;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j) {
      const double pr = Pe[i] * e[j];
      g += pr * pr;
    }
  return quad_form(M, e) + radius * std::sqrt(g);
}

inline Vec random_unit(std::mt19937_64& rng, int n, bool kernel) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec e(n);
  double nrm = 0.0;
  do {
    for (int i = 0; i < n; ++i) e[i] = nd(rng);
    if (kernel) e[0] = 0.0;
    nrm = e.norm();
  } while (nrm < 1e-12);
  for (int i = 0; i < n; ++i) e[i] /= nrm;
  return e;
}

}  // namespace detail

// Full numerical audit of an assembled schedule: deterministic grid
// sweeps for the metric and integral inequalities, Monte-Carlo unit
// directions with the closed-form ball supremum for the drift
// inequalities, and the structural identities on the windows.
// Failures become report entries; the function never throws for them.
inline CertificateReport certify(const GainSchedule& g, const Scenario& sc,
                                 const PlantTraces& tr) {
  CertificateReport rep;
  const int n = g.n;
  const double tau = g.tau;
  const TimeGrid& gr = tr.grid;

  const std::size_t i0 = gr.floor_index(g.t_bar0) + 1;
  const std::size_t i1 = gr.count - 1;
  const std::size_t stride = std::max<std::size_t>(1, (i1 - i0) / 20000);

  auto coupling_at = [&](double t, double* aval) {
    const double yt = g.ytau->value(t);
    const double ut = g.utau->value(t);
    for (int l = 0; l + 1 < n; ++l) aval[l] = g.sys.a(l, t - tau, yt, ut);
  };
  auto radius_at = [&](double t) { return g.env.sigma.value(t - tau); };

  // Grid sweep: metric bounds, exact off-support shape, integral floors.
  for (std::size_t k = i0; k <= i1; k += stride) {
    const double t = gr.t(k);
    const Mat P = g.P(t);
    rep.min_eig_slack = std::min(rep.min_eig_slack, min_eigenvalue(P) - 1.0);
    const double kap = g.kappa.value(t);
    rep.min_decay_gap = std::min(rep.min_decay_gap, g.integral_d(g.t_bar0, t) - kap);
    rep.min_margin_gap =
        std::min(rep.min_margin_gap, g.integral_d_bar(g.t_bar0, t) - kap + 1.0);
    if (g.find_support(t) < 0) {
      double off = std::fabs(g.d(t) + g.env.sigma_bar.value(t));
      if (g.find_window(t) < 0)
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j)
            off = std::max(off, std::fabs(P(i, j) - (i == j ? g.L : 0.0)));
      if (off > 1e-12) rep.fail("off-support shape violated at t=" + std::to_string(t));
      if (g.phi(t) != 0.0) rep.fail("phi nonzero off support at t=" + std::to_string(t));
    }
  }
  if (rep.min_eig_slack < -1e-9) rep.fail("metric dropped below identity");
  if (rep.min_decay_gap <= 0.0) rep.fail("decay integral failed to dominate the floor");
  if (rep.min_margin_gap < -1e-9) rep.fail("margin integral fell below floor minus one");

  rep.p0_norm_excess = spectral_norm_sym(g.P(g.t_bar0)) - g.L;
  if (rep.p0_norm_excess > 1e-9) rep.fail("initial metric norm exceeds L");

  // Joint continuity of everything published.
  auto joint = [&rep](const PiecewiseFn& f) {
    rep.worst_joint_gap = std::max(rep.worst_joint_gap, f.max_joint_gap(true));
  };
  joint(g.kappa);
  for (const auto& pl : g.plans) {
    for (const auto& e : pl.P_m.back().entries) joint(e);
    joint(pl.d_support);
    joint(pl.phi_support);
    for (const auto& lv : pl.levels) {
      joint(lv.d);
      joint(*lv.p);
    }
  }
  if (rep.worst_joint_gap > 1e-9) rep.fail("joint discontinuity in a published function");

  // Exact decay-floor values at the activation times.
  for (std::size_t nu = 2; nu + 1 <= sc.T.size(); ++nu) {
    const double t = sc.T[nu] + tau;
    if (t > g.kappa.breakpoint(g.kappa.segment_count())) break;
    const double err = std::fabs(g.kappa.value(t) - (static_cast<double>(nu) - 1.0));
    rep.worst_kappa_exact = std::max(rep.worst_kappa_exact, err);
  }
  if (rep.worst_kappa_exact > 1e-12) rep.fail("decay floor misses its exact plateau value");

  // Monotone decay floor, sampled.
  {
    const double lo = g.t_bar0, hi = g.kappa.breakpoint(g.kappa.segment_count());
    double prev = g.kappa.value(lo);
    for (int k = 1; k <= 2000; ++k) {
      const double t = lo + (hi - lo) * k / 2000.0;
      const double v = g.kappa.value(t);
      if (v < prev - 1e-9) rep.fail("decay floor decreased at t=" + std::to_string(t));
      prev = v;
    }
  }

  // Structural identities on the windows.
  for (const auto& pl : g.plans) {
    const Window& w = pl.w;
    const std::size_t j0 = gr.floor_index(w.lo) + 1;
    const std::size_t j1 = gr.floor_index(w.hi);
    const std::size_t wstride = std::max<std::size_t>(1, (j1 - j0) / 400);
    for (std::size_t k = j0; k <= j1; k += wstride) {
      const double t = gr.t(k);
      for (std::size_t b = 0; b < pl.P_m.size(); ++b) {
        const int m = static_cast<int>(b) + 2;
        Mat D = pl.P_m[b].value(t);
        for (int i = 0; i < m; ++i) D(i, i) -= 1.0;
        const double want = std::pow(g.L - 1.0, m);
        const double rel = std::fabs(det_laplace(D) - want) / std::fabs(want);
        rep.worst_det_rel = std::max(rep.worst_det_rel, rel);
      }
      // Decay rates must sit at or below the envelope drain outside the collar.
      for (std::size_t b = 0; b < pl.levels.size(); ++b) {
        const double eps = pl.eps[b];
        if (t < w.core_lo - eps || t > w.core_hi + eps) {
          const double ex = pl.levels[b].d.value(t) + g.env.sigma_bar.value(t);
          rep.worst_off_collar = std::max(rep.worst_off_collar, ex);
        }
      }
    }
  }
  if (rep.worst_det_rel > 1e-8) rep.fail("determinant identity broke on a window");
  if (rep.worst_off_collar > 1e-9) rep.fail("level decay exceeded the drain off collar");

  // Collar sub-collection integrals: random unions from the two collar
  // side intervals must never drain more than m/n.
  {
    std::mt19937_64 rng(sc.seed ^ 0x5DEECE66Dull);
    std::uniform_real_distribution<double> un(0.0, 1.0);
    for (const auto& pl : g.plans)
      for (std::size_t b = 0; b < pl.levels.size(); ++b) {
        const int m = static_cast<int>(b) + 2;
        const double eps = pl.eps[b];
        const double a = pl.w.core_lo, bb = pl.w.core_hi;
        for (int trial = 0; trial < 100; ++trial) {
          double total = 0.0;
          const int mode = trial % 3;  // left, right, union of both
          if (mode == 0 || mode == 2) {
            double u = a - eps + eps * un(rng), v = a - eps + eps * un(rng);
            if (u > v) std::swap(u, v);
            total += pl.levels[b].d.integral(u, v);
          }
          if (mode == 1 || mode == 2) {
            double u = bb + eps * un(rng), v = bb + eps * un(rng);
            if (u > v) std::swap(u, v);
            total += pl.levels[b].d.integral(u, v);
          }
          rep.min_collar_slack =
              std::min(rep.min_collar_slack, total + static_cast<double>(m) / n);
        }
      }
    if (rep.min_collar_slack < -1e-9) rep.fail("collar drain exceeded its budget");
  }

  // Injection rates strictly positive where defined.
  for (const auto& pl : g.plans) {
    for (int k = 0; k <= 200; ++k) {
      const double t =
          pl.support_lo + (pl.support_hi - pl.support_lo) * k / 200.0;
      rep.min_phi = std::min(rep.min_phi, pl.phi_support.value(t));
    }
    for (const auto& lv : pl.levels)
      if (!lv.phi.empty())
        for (int k = 0; k <= 200; ++k) {
          const double t = pl.w.lo + (pl.w.hi - pl.w.lo) * k / 200.0;
          rep.min_phi = std::min(rep.min_phi, lv.phi.value(t));
        }
  }
  if (rep.min_phi <= 0.0) rep.fail("injection rate not strictly positive");

  // Monte-Carlo drift inequalities with the closed-form ball supremum.
  std::mt19937_64 rng(sc.seed);
  std::uniform_real_distribution<double> ut(g.t_bar0, std::min(g.horizon, gr.t(i1)));
  double aval[kMaxDim] = {0.0};
  for (int s = 0; s < sc.cert_samples; ++s) {
    const double t = ut(rng);
    const bool on = g.find_support(t) >= 0;
    const Mat P = g.P(t);
    const Mat Pd = g.Pdot(t);
    coupling_at(t, aval);
    const double radius = radius_at(t);

    // (a) kernel directions on supports, arbitrary directions elsewhere.
    const Vec ek = detail::random_unit(rng, n, on);
    const double va = detail::drift_sup(P, Pd, aval, n, g.d(t), radius, ek);
    rep.worst_kernel = std::max(rep.worst_kernel, va);
    if (va > 1e-9 * (1.0 + std::fabs(g.d(t)) * g.L * g.L))
      rep.fail("kernel drift inequality failed at t=" + std::to_string(t));

    // (b) full injected inequality for arbitrary directions.
    const Vec ef = detail::random_unit(rng, n, false);
    const double vb = detail::drift_sup(P, Pd, aval, n, g.d_bar(t), radius, ef) -
                      g.phi(t) * ef[0] * ef[0];
    rep.worst_full = std::max(rep.worst_full, vb);
    if (vb > 1e-9 * (1.0 + g.phi(t)))
      rep.fail("injected drift inequality failed at t=" + std::to_string(t));
    rep.samples += 2;
  }

  // Deterministic corner probes: basis directions at support edges and cores.
  for (const auto& pl : g.plans) {
    const double probes[5] = {pl.support_lo, pl.w.core_lo,
                              0.5 * (pl.w.core_lo + pl.w.core_hi), pl.w.core_hi,
                              pl.support_hi};
    for (double t : probes) {
      const Mat P = g.P(t);
      const Mat Pd = g.Pdot(t);
      coupling_at(t, aval);
      const double radius = radius_at(t);
      for (int i = 0; i < n; ++i) {
        Vec e(n);
        e[i] = 1.0;
        if (i > 0) {
          const double va = detail::drift_sup(P, Pd, aval, n, g.d(t), radius, e);
          rep.worst_kernel = std::max(rep.worst_kernel, va);
          if (va > 1e-9 * (1.0 + std::fabs(g.d(t)) * g.L * g.L))
            rep.fail("kernel drift inequality failed at basis probe t=" +
                     std::to_string(t));
        }
        const double vb = detail::drift_sup(P, Pd, aval, n, g.d_bar(t), radius, e) -
                          g.phi(t) * e[0] * e[0];
        rep.worst_full = std::max(rep.worst_full, vb);
        if (vb > 1e-9 * (1.0 + g.phi(t)))
          rep.fail("injected drift inequality failed at basis probe t=" +
                   std::to_string(t));
        rep.samples += 2;
      }
    }
  }
  return rep;
}

}  // namespace dobs
