#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "dobs/envelopes.hpp"
#include "dobs/observer.hpp"
#include "dobs/plant.hpp"
#include "dobs/synthesis.hpp"
#include "dobs/system.hpp"

using namespace dobs;

namespace {

// Planar pair with strictly contractive drift in every component. The
// coupling is constant, so the only error sources left in a run started
// from the true delayed state are interpolation and stepper residue.
Scenario contractive_scenario() {
  Scenario sc;
  sc.name = "contractive";
  sc.sys.n = 2;
  sc.sys.f = [](int i, double t, const Vec& x, double) {
    if (i == 0) return -x[0] + 0.3 * std::cos(t);
    return -x[1];
  };
  sc.sys.a = [](int, double, double, double) { return 0.5; };
  sc.sys.partial_bound = [](int i, int j, double) {
    return (i == 1 && j == 1) ? 1.0 : 0.0;
  };
  sc.sys.coupling_bound = [](int, double) { return 0.5; };
  sc.u = [](double t) { return std::sin(t); };
  sc.u_bar = [](double) { return 1.0; };
  sc.beta = [](double t, double r) { return r * std::exp(0.5 * t); };
  sc.x0 = Vec(2);
  sc.x0[0] = 0.8;
  sc.x0[1] = -0.5;
  sc.tau = 0.5;
  sc.L = 2.0;
  sc.R = 2.0;
  sc.h = 1e-3;
  sc.horizon = 8.0;
  sc.T = {0.0, 2.0, 4.0, 6.0};
  return sc;
}

// Injection-free schedule over the contractive pair: no windows, so the
// gain is identically zero and the decay floor is the envelope drain.
GainSchedule passive_schedule(const Scenario& sc, const PlantTraces& tr) {
  GainSchedule g;
  g.n = sc.sys.n;
  g.L = sc.L;
  g.tau = sc.tau;
  g.R = sc.R;
  g.t_bar0 = sc.T[0] + sc.tau;
  g.horizon = sc.horizon;
  g.env = build_envelopes(sc, 0.0, sc.horizon + 1.0);
  g.kappa = build_kappa(sc.T, sc.tau, g.env.sigma_bar, g.t_bar0);
  g.sys = sc.sys;
  g.ytau = std::make_shared<SignalTrace>(shift_tau(tr.y, sc.tau));
  g.utau = std::make_shared<SignalTrace>(shift_tau(tr.u, sc.tau));
  return g;
}

}  // namespace

TEST_CASE("start threshold closed form") {
  // sqrt(L) beta exp(1 - kappa0) by hand: sqrt(4)*3*e^3.
  REQUIRE(xi_threshold(4.0, 3.0, -2.0) ==
          Catch::Approx(120.51322153912601).epsilon(1e-15));
  REQUIRE(xi_threshold(4.0, 3.0, -2.0) ==
          Catch::Approx(6.0 * std::exp(3.0)).epsilon(1e-15));
  // A unit floor at the start leaves just the leading factor.
  REQUIRE(xi_threshold(4.0, 3.0, 1.0) == 6.0);
  // Deeper floors can only enlarge the threshold.
  REQUIRE(xi_threshold(2.0, 1.0, -1.0) > xi_threshold(2.0, 1.0, 0.0));
  REQUIRE(xi_threshold(2.0, 1.0, 0.0) > xi_threshold(2.0, 1.0, 1.0));
  REQUIRE(xi_threshold(2.0, 1.0, -3.0) > std::sqrt(2.0) * 1.0);
}

TEST_CASE("certified envelope steps down by e at each activation") {
  Scenario sc;
  sc.beta = [](double t, double r) { return r * std::exp(0.3 * t); };
  GainSchedule g;
  g.n = 2;
  g.L = 2.0;
  g.tau = 0.5;
  g.R = 1.5;
  g.t_bar0 = 0.5;
  const PiecewiseFn sb = constant_fn(0.0, 12.0, 0.8);
  const std::vector<double> T{0.0, 2.0, 4.0, 6.0};
  g.kappa = build_kappa(T, g.tau, sb, g.t_bar0);

  const TimeGrid grid = make_grid(0.5, 6.5, 0.5);
  const SignalTrace env = error_envelope(g, sc, grid);
  const double lead = std::sqrt(2.0) * sc.beta(0.5, 1.5);

  // kappa starts at -3, reaches 1 at T2+tau and 2 at T3+tau.
  REQUIRE(env.samples[0] == Catch::Approx(lead * std::exp(4.0)).epsilon(1e-12));
  const std::size_t k2 = grid.exact_index(T[2] + g.tau);
  const std::size_t k3 = grid.exact_index(T[3] + g.tau);
  REQUIRE(env.samples[k2] == Catch::Approx(lead).epsilon(1e-12));
  REQUIRE(env.samples[k3] == Catch::Approx(lead * std::exp(-1.0)).epsilon(1e-12));
  REQUIRE(env.samples[k3] / env.samples[k2] ==
          Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  for (std::size_t k = 1; k < grid.count; ++k)
    REQUIRE(env.samples[k] <= env.samples[k - 1] * (1.0 + 1e-12));
}

TEST_CASE("exact initialization on a contractive pair stays at the stepper floor") {
  Scenario sc = contractive_scenario();
  validate_scenario(sc);
  PlantTraces tr = simulate_plant(sc);
  GainSchedule g = passive_schedule(sc, tr);

  ObserverOptions opt;
  opt.z0 = Vec(2);
  opt.z0[0] = tr.x[0].value(g.t_bar0 - sc.tau);
  opt.z0[1] = tr.x[1].value(g.t_bar0 - sc.tau);
  ObserverRun run = run_observer(sc, tr, g, opt);

  double sup_e = 0.0;
  for (double v : run.e_norm.samples) sup_e = std::max(sup_e, v);
  REQUIRE(sup_e <= 1e-6);

  // Same schedule from the origin: the gain is zero, so the measured
  // component's initial error survives as a drift offset.
  ObserverRun cold = run_observer(sc, tr, g);
  REQUIRE(cold.e_norm.samples[0] ==
          Catch::Approx(std::hypot(opt.z0[0], opt.z0[1])).epsilon(1e-12));
  REQUIRE(cold.e_norm.samples.back() > 1e-3);

  // Identical inputs give identical trajectories.
  ObserverRun again = run_observer(sc, tr, g, opt);
  std::size_t mismatches = 0;
  for (int i = 0; i < g.n; ++i)
    for (std::size_t k = 0; k < run.grid.count; ++k)
      if (run.z[static_cast<std::size_t>(i)].samples[k] !=
          again.z[static_cast<std::size_t>(i)].samples[k])
        ++mismatches;
  REQUIRE(mismatches == 0);
}

TEST_CASE("planar run stays inside the certified tube") {
  Scenario sc = example1_scenario({});
  validate_scenario(sc);
  PlantTraces tr = simulate_plant(sc);
  GainSchedule g = synthesize(sc, tr);
  ObserverRun run = run_observer(sc, tr, g);

  REQUIRE(run.grid.start == Catch::Approx(g.t_bar0).margin(1e-15));
  REQUIRE(run.grid.t(run.grid.count - 1) ==
          Catch::Approx(sc.horizon).margin(1e-9));
  REQUIRE(run.xi_used ==
          xi_threshold(g.L, sc.beta(g.t_bar0, g.R), g.kappa.value(g.t_bar0)));
  REQUIRE(run.xi_used == Catch::Approx(1429.263891306952).epsilon(1e-12));
  REQUIRE(g.xi == run.xi_used);
  REQUIRE(run.e_norm.samples[0] ==
          Catch::Approx(1.4422205101855958).epsilon(1e-12));

  // Tube and threshold hold at every node; the margin is not marginal.
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k < run.grid.count; ++k) {
    REQUIRE(run.e_norm.samples[k] < run.xi_used);
    worst_ratio = std::max(worst_ratio,
                           run.e_norm.samples[k] / run.bound.samples[k]);
  }
  REQUIRE(worst_ratio <= 1.0 + 1e-3);
  REQUIRE(worst_ratio < 0.1);

  // Terminal contraction and the per-activation geometric envelope.
  REQUIRE(run.e_norm.samples.back() <= 1e-2 * run.e_norm.samples[0]);
  const double lead = std::sqrt(g.L) * sc.beta(g.t_bar0, g.R);
  const std::size_t kref = run.grid.exact_index(2.0 * 3.8 + sc.tau);
  REQUIRE(kref != TimeGrid::npos);
  const double e_ref = run.e_norm.samples[kref];
  for (int nu = 2; nu <= 10; ++nu) {
    const std::size_t k = run.grid.exact_index(3.8 * nu + sc.tau);
    REQUIRE(k != TimeGrid::npos);
    REQUIRE(run.bound.samples[k] ==
            Catch::Approx(lead * std::exp(2.0 - nu)).epsilon(1e-9));
    REQUIRE(run.e_norm.samples[k] <=
            e_ref * std::pow(std::exp(-1.0) * 1.05, nu - 2));
  }

  // Error components are the delayed-state residuals.
  for (std::size_t k : {std::size_t{0}, std::size_t{1234}, std::size_t{20000},
                        run.grid.count - 1}) {
    const double t = run.grid.t(k);
    for (int i = 0; i < g.n; ++i)
      REQUIRE(run.e[static_cast<std::size_t>(i)].samples[k] ==
              tr.x[static_cast<std::size_t>(i)].value(t - sc.tau) -
                  run.z[static_cast<std::size_t>(i)].samples[k]);
  }

  // Without injection the measured component's offset never drains.
  ObserverOptions noinj;
  noinj.disable_injection = true;
  GainSchedule g2 = g;
  ObserverRun off = run_observer(sc, tr, g2, noinj);
  REQUIRE(off.e_norm.samples.back() > 1e-2);

  // Bad start node or state dimension is rejected up front.
  GainSchedule g3 = g;
  g3.t_bar0 += 0.5 * sc.h;
  REQUIRE_THROWS_AS(run_observer(sc, tr, g3), ConfigError);
  ObserverOptions bad;
  bad.z0 = Vec(3);
  REQUIRE_THROWS_AS(run_observer(sc, tr, g, bad), ConfigError);
}

TEST_CASE("three-state chain run stays inside the certified tube") {
  Scenario sc = chain3_scenario({});
  validate_scenario(sc);
  PlantTraces tr = simulate_plant(sc);
  GainSchedule g = synthesize(sc, tr);
  ObserverRun run = run_observer(sc, tr, g);

  REQUIRE(run.xi_used == Catch::Approx(1.2477414975690057e+20).epsilon(1e-12));
  REQUIRE(run.e_norm.samples[0] ==
          Catch::Approx(1.2328828005937953).epsilon(1e-12));

  double worst_ratio = 0.0, sup_e = 0.0;
  for (std::size_t k = 0; k < run.grid.count; ++k) {
    sup_e = std::max(sup_e, run.e_norm.samples[k]);
    worst_ratio = std::max(worst_ratio,
                           run.e_norm.samples[k] / run.bound.samples[k]);
  }
  REQUIRE(sup_e < run.xi_used);
  REQUIRE(worst_ratio <= 1.0 + 1e-3);
  REQUIRE(worst_ratio < 1e-9);
  REQUIRE(run.e_norm.samples.back() <= 1e-6 * run.e_norm.samples[0]);
}
