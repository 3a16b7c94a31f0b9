#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/piecewise.hpp"
#include "dobs/system.hpp"

namespace dobs {

// Nondecreasing bounds used everywhere downstream:
//   sigma    dominates the Frobenius norm of the drift Jacobian block
//            (columns 2..n) over the reachable tube
//   sigma_i  dominates |a_i| over the tube, running max in time
//   sigma_bar = sqrt(sigma^2 + sum sigma_i^2), dominates the Frobenius
//            norm of the full error system matrix
struct BoundEnvelopes {
  PiecewiseFn sigma;
  std::vector<PiecewiseFn> sigma_i;
  PiecewiseFn sigma_bar;
  double lo = 0.0, hi = 0.0;
};

namespace detail {

inline bool closure_constant(const std::function<double(double)>& f, double lo,
                             double hi, double* value) {
  const double v0 = f(lo);
  for (int k = 1; k <= 6; ++k) {
    if (f(lo + (hi - lo) * k / 6.0) != v0) return false;
  }
  *value = v0;
  return true;
}

inline PiecewiseFn closure_to_fn(std::function<double(double)> f, double lo, double hi) {
  double c = 0.0;
  PiecewiseFn out;
  out.start_at(lo);
  if (closure_constant(f, lo, hi, &c)) {
    out.append(hi, ConstantSeg{c});
  } else {
    auto fp = std::make_shared<std::function<double(double)>>(std::move(f));
    const double fd = 1e-6 * std::max(1.0, hi - lo);
    out.append(hi, AnalyticSeg{[fp](double t) { return (*fp)(t); },
                               [fp, fd](double t) {
                                 return ((*fp)(t + fd) - (*fp)(t - fd)) / (2.0 * fd);
                               }});
  }
  out.finalize();
  return out;
}

// Piecewise linear interpolant through (ts, vs).
inline PiecewiseFn linear_fn(const std::vector<double>& ts, const std::vector<double>& vs) {
  PiecewiseFn out;
  out.start_at(ts.front());
  for (std::size_t k = 1; k < ts.size(); ++k) {
    CubicSeg s;
    s.t0 = ts[k - 1];
    s.w = ts[k] - ts[k - 1];
    s.v0 = vs[k - 1];
    s.v1 = vs[k];
    s.g0 = s.g1 = vs[k] - vs[k - 1];
    out.append(ts[k], s);
  }
  out.finalize();
  return out;
}

}  // namespace detail

// Build the envelopes over [lo, hi]. With analytic bound closures on the
// system they are taken verbatim (and checked nondecreasing); otherwise
// the bounds are maximized numerically over the reachable box
// |(x_1..x_i, u)| <= 2 beta(t, R) + u_bar(t) + xi_box with 32 samples per
// axis, inflated by 1.25, and accumulated into a running max.
inline BoundEnvelopes build_envelopes(const Scenario& sc, double lo, double hi,
                                      double xi_box = 0.0) {
  const int n = sc.sys.n;
  BoundEnvelopes env;
  env.lo = lo;
  env.hi = hi;

  const bool analytic = static_cast<bool>(sc.sys.partial_bound) &&
                        static_cast<bool>(sc.sys.coupling_bound);
  if (analytic) {
    auto pb = sc.sys.partial_bound;
    env.sigma = detail::closure_to_fn(
        [pb, n](double t) {
          double s = 0.0;
          for (int i = 1; i < n; ++i)
            for (int j = 1; j <= i; ++j) {
              const double b = pb(i, j, t);
              s += b * b;
            }
          return std::sqrt(s);
        },
        lo, hi);
    for (int i = 0; i + 1 < n; ++i) {
      auto cb = sc.sys.coupling_bound;
      env.sigma_i.push_back(detail::closure_to_fn(
          [cb, i](double t) { return cb(i, t); }, lo, hi));
    }
  } else {
    const int kNodes = 48, kAxis = 32;
    std::vector<double> ts(kNodes + 1);
    std::vector<double> vs(kNodes + 1, 0.0);
    for (int k = 0; k <= kNodes; ++k) ts[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / kNodes;

    auto axis = [&](double r, int s) { return -r + 2.0 * r * s / (kAxis - 1); };

    // sigma: finite difference partials over the box, columns 2..n.
    double running = 0.0;
    for (int k = 0; k <= kNodes; ++k) {
      const double t = ts[static_cast<std::size_t>(k)];
      const double r = 2.0 * sc.beta(t, sc.R) + sc.u_bar(t) + xi_box;
      double acc = 0.0;
      for (int i = 1; i < n; ++i) {
        for (int j = 1; j <= i; ++j) {
          double worst = 0.0;
          const double fd = 1e-5 * std::max(1.0, r);
          // Probe a deterministic lattice of the (i+2) free coordinates
          // collapsed to three influential axes: x_j, x_i, u.
          for (int s1 = 0; s1 < kAxis; ++s1)
            for (int s2 = 0; s2 < kAxis; ++s2)
              for (int s3 = 0; s3 < kAxis; ++s3) {
                Vec x(n);
                x[j] = axis(r, s1);
                x[i] = axis(r, s2);
                const double u = axis(r, s3);
                double nrm = u * u;
                for (int c = 0; c < n; ++c) nrm += x[c] * x[c];
                if (nrm > r * r) continue;
                Vec xp = x, xm = x;
                xp[j] += fd;
                xm[j] -= fd;
                const double der =
                    (sc.sys.f(i, t, xp, u) - sc.sys.f(i, t, xm, u)) / (2.0 * fd);
                worst = std::max(worst, std::fabs(der));
              }
          acc += worst * worst;
        }
      }
      running = std::max(running, 1.25 * std::sqrt(acc));
      vs[static_cast<std::size_t>(k)] = running;
    }
    env.sigma = detail::linear_fn(ts, vs);

    // sigma_i: running max of |a_i| over |y| <= beta, |u| <= u_bar.
    for (int i = 0; i + 1 < n; ++i) {
      double run = 0.0;
      std::vector<double> vi(kNodes + 1, 0.0);
      for (int k = 0; k <= kNodes; ++k) {
        const double t = ts[static_cast<std::size_t>(k)];
        const double ry = sc.beta(t, sc.R), ru = sc.u_bar(t);
        double worst = 0.0;
        for (int s1 = 0; s1 < kAxis; ++s1)
          for (int s2 = 0; s2 < kAxis; ++s2)
            worst = std::max(worst, std::fabs(sc.sys.a(i, t, axis(ry, s1), axis(ru, s2))));
        run = std::max(run, 1.25 * worst);
        vi[static_cast<std::size_t>(k)] = run;
      }
      env.sigma_i.push_back(detail::linear_fn(ts, vi));
    }
  }

  // Class requirement: every envelope is nondecreasing.
  for (int k = 0; k < 200; ++k) {
    const double t0 = lo + (hi - lo) * k / 200.0;
    const double t1 = lo + (hi - lo) * (k + 1) / 200.0;
    if (env.sigma.value(t1) < env.sigma.value(t0) - 1e-12)
      throw SynthesisError("sigma envelope is decreasing");
    for (const auto& si : env.sigma_i)
      if (si.value(t1) < si.value(t0) - 1e-12)
        throw SynthesisError("coupling envelope is decreasing");
  }

  // Combine. Constant inputs collapse to an exactly integrable constant.
  bool all_const = env.sigma.segment_count() == 1;
  double cval = 0.0;
  {
    double s = env.sigma.value(lo);
    if (env.sigma.value(lo) != env.sigma.value(hi)) all_const = false;
    double acc = s * s;
    for (const auto& si : env.sigma_i) {
      if (si.segment_count() != 1 || si.value(lo) != si.value(hi)) all_const = false;
      acc += si.value(lo) * si.value(lo);
    }
    cval = std::sqrt(acc);
  }
  if (all_const) {
    env.sigma_bar = constant_fn(lo, hi, cval);
  } else {
    auto sig = std::make_shared<PiecewiseFn>(env.sigma);
    auto sis = std::make_shared<std::vector<PiecewiseFn>>(env.sigma_i);
    auto val = [sig, sis](double t) {
      double acc = sig->value(t) * sig->value(t);
      for (const auto& si : *sis) acc += si.value(t) * si.value(t);
      return std::sqrt(acc);
    };
    auto der = [sig, sis, val](double t) {
      double acc = sig->value(t) * sig->deriv(t);
      for (const auto& si : *sis) acc += si.value(t) * si.deriv(t);
      const double v = val(t);
      return v > 0.0 ? acc / v : 0.0;
    };
    PiecewiseFn sb;
    sb.start_at(lo);
    sb.append(hi, AnalyticSeg{val, der});
    sb.finalize();
    env.sigma_bar = sb;
  }
  return env;
}

}  // namespace dobs
