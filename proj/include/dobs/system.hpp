#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/linalg.hpp"

namespace dobs {

// Triangular plant
//   x_i' = f_i(t, x_1..x_i, u) + a_i(t, x_1, u) x_{i+1}   (i < n)
//   x_n' = f_n(t, x, u),  y = x_1
// The drift component i may read x_1..x_i only; couplings read x_1 and u.
struct TriangularSystem {
  int n = 0;
  // f(i, t, x, u), i zero based
  std::function<double(int, double, const Vec&, double)> f;
  // a(i, t, x1, u), i in [0, n-2]
  std::function<double(int, double, double, double)> a;

  // Optional analytic envelope data. When absent the numeric path
  // (grid maximization over the reachable box) is used instead.
  // partial_bound(i, j, t): bound on |df_i/dx_j| over the state tube,
  // zero based with j >= 1 (the x_1 slot never enters).
  std::function<double(int, int, double)> partial_bound;
  // coupling_bound(i, t): nondecreasing bound on |a_i| up to time t.
  std::function<double(int, double)> coupling_bound;
};

struct Scenario {
  std::string name;
  TriangularSystem sys;
  std::function<double(double)> u;                    // input signal, C1
  std::function<double(double, double)> beta;         // beta(t, r), class NN
  std::function<double(double)> u_bar;                // nondecreasing |u| bound
  Vec x0;
  double t0 = 0.0;
  double horizon = 0.0;
  double tau = 0.0;
  double L = 2.0;
  double R = 0.0;
  double h = 0.0;
  double delta_a = 0.0;          // 0 requests the trace derived default
  double core_fraction = 0.5;    // central share of each window kept as core
  double shrink_fraction = 0.05; // trimmed from each side of a detected run
  std::vector<double> T;         // period boundaries, T[0] = t0
  std::string xi_mode = "auto";
  double xi_value = 0.0;
  unsigned long long seed = 12345;
  int cert_samples = 10000;
  int sphere_points_per_dim = 2000;
};

inline void validate_scenario(const Scenario& sc) {
  const int n = sc.sys.n;
  if (n < 2 || n > kMaxDim) throw ConfigError("state dimension out of range");
  if (sc.h <= 0.0) throw ConfigError("step h must be positive");
  if (sc.tau <= 0.0) throw ConfigError("delay tau must be positive");
  if (sc.h >= sc.tau / 10.0)
    throw ConfigError("step h must be below tau/10 for delayed lookups");
  {
    const double r = sc.tau / sc.h;
    if (std::fabs(r - std::round(r)) > 1e-9 * std::max(1.0, r))
      throw ConfigError("tau must be an integer multiple of h");
  }
  if (sc.L <= 1.0) throw ConfigError("weight L must exceed 1");
  if (sc.R <= 0.0) throw ConfigError("radius R must be positive");
  if (sc.horizon <= sc.t0) throw ConfigError("horizon must exceed t0");
  if (sc.T.size() < 2) throw ConfigError("at least two period boundaries required");
  if (std::fabs(sc.T.front() - sc.t0) > 1e-12)
    throw ConfigError("first period boundary must equal t0");
  for (std::size_t k = 1; k < sc.T.size(); ++k) {
    const double gap = sc.T[k] - sc.T[k - 1];
    if (gap <= 0.0) throw ConfigError("period boundaries must increase");
    const double r = gap / sc.tau;
    if (std::fabs(r - std::round(r)) > 1e-9 * std::max(1.0, r))
      throw ConfigError("period spacing must be an integer multiple of tau");
  }
  if (sc.core_fraction <= 0.0 || sc.core_fraction >= 1.0)
    throw ConfigError("core fraction must lie in (0, 1)");
  if (sc.shrink_fraction < 0.0 || sc.shrink_fraction >= 0.5)
    throw ConfigError("shrink fraction must lie in [0, 0.5)");
  if (sc.x0.n != n) throw ConfigError("x0 dimension mismatch");
  if (sc.xi_mode != "auto" && sc.xi_mode != "fixed")
    throw ConfigError("xi mode must be auto or fixed");
}

// C1 ramp: 0 below lo, 1 above hi, smoothstep between.
inline double smoothstep(double lo, double hi, double t) {
  if (t <= lo) return 0.0;
  if (t >= hi) return 1.0;
  const double x = (t - lo) / (hi - lo);
  return x * x * (3.0 - 2.0 * x);
}

// Periodic C1 gate, described per period as [on, off] with given ramp width.
struct GateSpec {
  bool always = false;
  double on = 0.0, off = 0.0, ramp = 0.0;

  double operator()(double phase) const {
    if (always) return 1.0;
    return smoothstep(on, on + ramp, phase) * (1.0 - smoothstep(off - ramp, off, phase));
  }
};

struct Example1Params {
  int q = 1;
  double alpha0 = 0.1;
  double amp = 0.4;
  double period = 3.8;
  double tau = 0.1;
  double h = 1e-3;
  double horizon = 40.0;
  double L = 2.0;
  double R = 2.0;
  double x0_1 = 1.2, x0_2 = -0.8;
  double delta_a = 0.04;
  double core_fraction = 0.8;
  GateSpec gate{false, 1.005, 1.30, 0.04};
};

// Planar benchmark: x1' = u x2, x2' = alpha0 x1/(1+t) - x2^q, y = x1.
// The input is a gated cosine with per-period phase reset; the gate is
// closed near period boundaries so the reset stays C1.
inline Scenario example1_scenario(const Example1Params& p) {
  if (p.q < 1 || p.q % 2 == 0) throw ConfigError("q must be odd and positive");
  Scenario sc;
  sc.name = "example1";
  sc.sys.n = 2;
  const int q = p.q;
  const double alpha0 = p.alpha0;
  sc.sys.f = [alpha0, q](int i, double t, const Vec& x, double) {
    if (i == 0) return 0.0;
    double pw = 1.0;
    for (int k = 0; k < q; ++k) pw *= x[1];
    return alpha0 * x[0] / (1.0 + t) - pw;
  };
  sc.sys.a = [](int, double, double, double u) { return u; };
  if (q == 1) {
    sc.sys.partial_bound = [](int i, int j, double) {
      return (i == 1 && j == 1) ? 1.0 : 0.0;
    };
  }
  const double amp = p.amp;
  sc.sys.coupling_bound = [amp](int, double) { return amp; };

  const double period = p.period;
  const GateSpec gate = p.gate;
  sc.u = [amp, period, gate](double t) {
    if (gate.always) return amp * std::cos(0.5 * t);
    const double phase = t - period * std::floor(t / period);
    return amp * gate(phase) * std::cos(0.5 * phase);
  };
  sc.u_bar = [amp](double) { return amp; };
  // Gronwall envelope: V = |x|^2/2 obeys V' <= (|u| + alpha(t)) 2V with
  // alpha = alpha0/(1+t), so |x(t)| <= r exp(amp t/2) (1+t)^(alpha0/2).
  sc.beta = [amp, alpha0](double t, double r) {
    return r * std::exp(0.5 * amp * t) * std::pow(1.0 + t, 0.5 * alpha0);
  };
  sc.x0 = Vec(2);
  sc.x0[0] = p.x0_1;
  sc.x0[1] = p.x0_2;
  sc.tau = p.tau;
  sc.L = p.L;
  sc.R = p.R;
  sc.h = p.h;
  sc.horizon = p.horizon;
  sc.delta_a = p.delta_a;
  sc.core_fraction = p.core_fraction;
  for (double t = 0.0; t <= p.horizon + 2.0 * p.period + 1e-9; t += p.period)
    sc.T.push_back(t);
  return sc;
}

struct Chain3Params {
  // a2 sized so the level-2 injection rate keeps the next collar increment
  // resolvable on the grid: the border gain scales like L(d+sigma)/a2, and
  // the increment shrinks like one over the squared gain slope.
  double a2 = 2.5;
  double tau = 6.0;
  double h = 1e-5;
  double horizon = 26.0;
  double L = 2.0;
  double R = 2.0;
  double delta_a = 0.04;
  double core_fraction = 0.8;
};

// Three state chain: x1' = u x2, x2' = -0.15 x2 + a2 x3,
// x3' = 0.1 x2 - 0.15 x3. The input is a C1 trapezoid per period.
inline Scenario chain3_scenario(const Chain3Params& p) {
  Scenario sc;
  sc.name = "chain3";
  sc.sys.n = 3;
  const double a2 = p.a2;
  sc.sys.f = [](int i, double, const Vec& x, double) {
    if (i == 0) return 0.0;
    if (i == 1) return -0.15 * x[1];
    return 0.1 * x[1] - 0.15 * x[2];
  };
  sc.sys.a = [a2](int i, double, double, double u) {
    return (i == 0) ? u : a2;
  };
  sc.sys.partial_bound = [](int i, int j, double) {
    if (i == 1 && j == 1) return 0.15;
    if (i == 2 && j == 1) return 0.10;
    if (i == 2 && j == 2) return 0.15;
    return 0.0;
  };
  sc.sys.coupling_bound = [a2](int i, double) { return (i == 0) ? 1.0 : a2; };

  const double period = 6.0;
  const GateSpec gate{false, 0.05, 5.0, 0.1};
  sc.u = [period, gate](double t) {
    const double phase = t - period * std::floor(t / period);
    return gate(phase);
  };
  sc.u_bar = [](double) { return 1.0; };
  sc.beta = [p](double t, double r) {
    return r * std::exp(0.5 * (1.0 + p.a2 + 0.1) * t);
  };
  sc.x0 = Vec(3);
  sc.x0[0] = 1.0;
  sc.x0[1] = -0.6;
  sc.x0[2] = 0.4;
  sc.tau = p.tau;
  sc.L = p.L;
  sc.R = p.R;
  sc.h = p.h;
  sc.horizon = p.horizon;
  sc.delta_a = p.delta_a;
  sc.core_fraction = p.core_fraction;
  for (double t = 0.0; t <= 30.0 + 1e-9; t += period) sc.T.push_back(t);
  return sc;
}

}  // namespace dobs
