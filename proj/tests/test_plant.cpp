#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dobs/plant.hpp"
#include "dobs/system.hpp"

using namespace dobs;

namespace {

// Minimal scenario shell for hand built systems.
Scenario shell(TriangularSystem sys, std::function<double(double)> u, Vec x0,
               double tau, double h, double horizon, std::vector<double> T) {
  Scenario sc;
  sc.sys = std::move(sys);
  sc.u = std::move(u);
  sc.u_bar = [](double) { return 2.0; };
  sc.beta = [](double t, double r) { return (r + 1.0) * std::exp(t); };
  sc.x0 = x0;
  sc.tau = tau;
  sc.h = h;
  sc.horizon = horizon;
  sc.L = 2.0;
  sc.R = 2.0;
  sc.T = std::move(T);
  return sc;
}

TriangularSystem integrator2() {
  TriangularSystem s;
  s.n = 2;
  s.f = [](int, double, const Vec&, double) { return 0.0; };
  s.a = [](int, double, double, double) { return 1.0; };
  return s;
}

}  // namespace

TEST_CASE("rk4 reproduces a linear flow exactly") {
  // x1' = x2, x2' = 0 from (1, 2): x = (1 + 2t, 2). Polynomial of degree
  // one, so fixed step RK4 is exact up to roundoff.
  Vec x0(2);
  x0[0] = 1.0;
  x0[1] = 2.0;
  auto sc = shell(integrator2(), [](double) { return 1.0; }, x0, 0.1, 1e-3, 2.0,
                  {0.0, 1.0, 2.0});
  auto tr = simulate_plant(sc);
  for (std::size_t k = 0; k < tr.grid.count; k += 37) {
    const double t = tr.grid.t(k);
    REQUIRE(tr.x[0].samples[k] == Catch::Approx(1.0 + 2.0 * t).margin(1e-12));
    REQUIRE(tr.x[1].samples[k] == Catch::Approx(2.0).margin(1e-15));
  }
  REQUIRE(tr.y.samples == tr.x[0].samples);
}

TEST_CASE("rk4 self convergence near fourth order") {
  Example1Params p;
  p.horizon = 7.6;
  auto coarse = example1_scenario(p);
  p.h = 5e-4;
  auto fine = example1_scenario(p);
  p.h = 2.5e-4;
  auto finest = example1_scenario(p);
  auto t1 = simulate_plant(coarse), t2 = simulate_plant(fine), t3 = simulate_plant(finest);
  const double e12 = std::fabs(t1.x[1].samples.back() - t3.x[1].samples.back());
  const double e23 = std::fabs(t2.x[1].samples.back() - t3.x[1].samples.back());
  if (e23 > 1e-15) {
    REQUIRE(e12 / e23 >= 8.0);  // fourth order would give ~16
  } else {
    SUCCEED();
  }
}

TEST_CASE("plant simulation is reproducible bit for bit") {
  auto sc = example1_scenario({});
  auto a = simulate_plant(sc);
  auto b = simulate_plant(sc);
  REQUIRE(a.x[0].samples == b.x[0].samples);
  REQUIRE(a.x[1].samples == b.x[1].samples);
  REQUIRE(a.u.samples == b.u.samples);
}

TEST_CASE("escape beyond ten times the envelope aborts") {
  TriangularSystem s;
  s.n = 2;
  s.f = [](int i, double, const Vec& x, double) { return i == 1 ? x[1] : 0.0; };
  s.a = [](int, double, double, double) { return 0.0; };
  Vec x0(2);
  x0[0] = 0.0;
  x0[1] = 1.0;
  auto sc = shell(std::move(s), [](double) { return 0.0; }, x0, 0.1, 1e-3, 50.0,
                  {0.0, 1.0, 2.0});
  sc.beta = [](double, double) { return 1.5; };  // x2 = e^t escapes quickly
  REQUIRE_THROWS_AS(simulate_plant(sc), HypothesisError);
}

TEST_CASE("drift components ignore later states") {
  // Triangularity probe: perturbing x_{i+1}.. must leave f_i unchanged.
  for (auto sc : {example1_scenario({}), chain3_scenario({})}) {
    const int n = sc.sys.n;
    for (int trial = 0; trial < 50; ++trial) {
      const double t = 0.1 + 0.37 * trial;
      Vec x(n), xp(n);
      for (int i = 0; i < n; ++i) x[i] = std::sin(1.7 * trial + i) * 2.0;
      for (int i = 0; i < n; ++i) {
        xp = x;
        for (int j = i + 1; j < n; ++j) xp[j] += 3.1 + j;
        REQUIRE(std::fabs(sc.sys.f(i, t, x, 0.3) - sc.sys.f(i, t, xp, 0.3)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("H1 holds on the pinned presets") {
  for (auto sc : {example1_scenario({}), chain3_scenario({})}) {
    auto tr = simulate_plant(sc);
    auto rep = check_H1(sc, tr);
    INFO(sc.name << " worst state margin " << rep.worst_state_margin);
    REQUIRE(rep.ok);
  }
}

TEST_CASE("H1 flags an undersized envelope") {
  auto sc = example1_scenario({});
  sc.beta = [](double, double) { return 1e-3; };
  auto tr_sc = example1_scenario({});
  auto tr = simulate_plant(tr_sc);
  auto rep = check_H1(sc, tr);
  REQUIRE_FALSE(rep.ok);
  REQUIRE(rep.worst_state_margin > 0.0);
}

TEST_CASE("step input places the window in the third subinterval") {
  // u = 0 before T0 + 2 tau, 1 afterwards, four subintervals per period,
  // couplings a1 = u: the first qualifying subinterval is the third.
  const double tau = 0.25;
  TriangularSystem s;
  s.n = 2;
  s.f = [](int, double, const Vec&, double) { return 0.0; };
  s.a = [](int, double, double, double u) { return u; };
  Vec x0(2);
  x0[0] = 1.0;
  x0[1] = 0.0;
  auto sc = shell(std::move(s), [tau](double t) { return t >= 2.0 * tau ? 1.0 : 0.0; },
                  x0, tau, 1e-3, 1.0, {0.0, 1.0});
  sc.delta_a = 0.5;
  auto tr = simulate_plant(sc);
  auto ws = detect_windows(sc, tr);
  REQUIRE(ws.size() == 1);
  REQUIRE(ws[0].m == 3);
  // Observer time: one tau past the detected run inside (2 tau, 3 tau).
  REQUIRE(ws[0].lo >= 3.0 * tau);
  REQUIRE(ws[0].hi <= 4.0 * tau);
}

TEST_CASE("window detection on the planar preset") {
  auto sc = example1_scenario({});
  auto tr = simulate_plant(sc);
  auto ws = detect_windows(sc, tr);
  REQUIRE(ws.size() >= 10);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const auto& w = ws[i];
    REQUIRE(w.nu == static_cast<int>(i) + 1);
    // Strict nesting core inside span inside one delayed subinterval.
    REQUIRE(w.lo < w.core_lo);
    REQUIRE(w.core_lo < w.core_hi);
    REQUIRE(w.core_hi < w.hi);
    const double sub_lo = sc.T[static_cast<std::size_t>(w.nu - 1)] + sc.tau * (w.m - 1) + sc.tau;
    const double sub_hi = sub_lo + sc.tau;
    REQUIRE(w.lo > sub_lo);
    REQUIRE(w.hi < sub_hi);
    if (i > 0) REQUIRE(ws[i - 1].hi < w.lo);  // disjoint, ordered
  }
  // Same gate every period: the subinterval index is stable.
  for (const auto& w : ws) REQUIRE(w.m == ws[0].m);
}

TEST_CASE("delayed couplings clear the floor across each window") {
  for (auto sc : {example1_scenario({}), chain3_scenario({})}) {
    auto tr = simulate_plant(sc);
    auto ws = detect_windows(sc, tr);
    REQUIRE(!ws.empty());
    auto y_tau = shift_tau(tr.y, sc.tau);
    auto u_tau = shift_tau(tr.u, sc.tau);
    for (const auto& w : ws) {
      std::size_t k = tr.grid.floor_index(w.lo);
      for (; k < tr.grid.count && tr.grid.t(k) <= w.hi + 1e-12; ++k) {
        const double t = tr.grid.t(k);
        if (t < w.lo - 1e-12) continue;
        for (int i = 0; i + 1 < sc.sys.n; ++i) {
          const double ai =
              sc.sys.a(i, t - sc.tau, y_tau.value(t), u_tau.value(t));
          REQUIRE(std::fabs(ai) >= sc.delta_a);
        }
      }
    }
  }
}

TEST_CASE("window detection is reproducible") {
  auto sc = example1_scenario({});
  auto tr = simulate_plant(sc);
  auto a = detect_windows(sc, tr);
  auto b = detect_windows(sc, tr);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].lo == b[i].lo);
    REQUIRE(a[i].hi == b[i].hi);
    REQUIRE(a[i].core_lo == b[i].core_lo);
    REQUIRE(a[i].core_hi == b[i].core_hi);
  }
}

TEST_CASE("silent couplings raise a hypothesis error") {
  TriangularSystem s = integrator2();
  s.a = [](int, double, double, double u) { return u; };
  Vec x0(2);
  x0[0] = 1.0;
  x0[1] = 0.0;
  auto sc = shell(std::move(s), [](double) { return 0.0; }, x0, 0.25, 1e-3, 1.0,
                  {0.0, 1.0});
  sc.delta_a = 0.5;
  auto tr = simulate_plant(sc);
  REQUIRE_THROWS_AS(detect_windows(sc, tr), HypothesisError);
}

TEST_CASE("scenario validation rejects bad timing") {
  auto sc = example1_scenario({});
  sc.tau = 0.1003;  // not a multiple of h
  REQUIRE_THROWS_AS(validate_scenario(sc), ConfigError);
  sc = example1_scenario({});
  sc.h = 0.02;  // not below tau/10
  REQUIRE_THROWS_AS(validate_scenario(sc), ConfigError);
  sc = example1_scenario({});
  sc.T[1] = sc.T[0] + 1.23 * sc.tau;  // spacing not a tau multiple
  REQUIRE_THROWS_AS(validate_scenario(sc), ConfigError);
}
