#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/observer.hpp"
#include "dobs/plant.hpp"
#include "dobs/synthesis.hpp"

namespace dobs {

// Radial saturation of a full stage right-hand side: unchanged inside
// the ball, faded linearly on the annulus up to twice the radius, zero
// beyond. The fade keeps the field continuous and globally bounded, so
// every stage trajectory exists on its whole interval.
inline Vec saturated_rhs(const Vec& G_raw, const Vec& z, double zeta) {
  if (zeta <= 0.0) throw ConfigError("saturation radius must be positive");
  const double fac = detail::sat_factor(z.norm(), zeta);
  Vec out(G_raw.n);
  for (int i = 0; i < G_raw.n; ++i) out[i] = G_raw[i] * fac;
  return out;
}

struct StagePlan {
  int m = 0;                         // stage index, also the schedule radius
  double t_start = 0.0, t_end = 0.0; // active interval, end exclusive
  double xi = 0.0;                   // stage error threshold
  double zeta = 0.0;                 // saturation radius
  GainSchedule sched;                // radius-m schedule from the stage anchor
};

struct SwitchPlan {
  double t0 = 0.0, tau = 0.0, L = 2.0;
  std::vector<double> times;         // t_1 .. t_{m_max}, then the final cutoff
  std::vector<StagePlan> stages;
  int m_max = 0;
  bool truncated = false;
  std::string note;
};

namespace detail {

// Radius-m schedule anchored at an activation boundary: the scenario's
// activation sequence is cut to its suffix from the anchor on, so the
// schedule's decay floor starts exactly at anchor + tau and every kept
// period still funds its own climb.
inline GainSchedule stage_schedule(const Scenario& sc, const PlantTraces& tr,
                                   int m, double T_anchor) {
  Scenario s2 = sc;
  s2.R = static_cast<double>(m);
  s2.T.clear();
  for (double Tv : sc.T)
    if (Tv >= T_anchor - 1e-9) s2.T.push_back(Tv);
  if (s2.T.size() < 2)
    throw SynthesisError("activation tail too short for a stage schedule");
  if (std::fabs(s2.T.front() - T_anchor) > 1e-9)
    throw SynthesisError("stage anchor is not an activation boundary");
  s2.t0 = s2.T.front();
  return synthesize(s2, tr);
}

}  // namespace detail

// Builds the stage sequence: switching times, per-stage thresholds and
// saturation radii, and the per-radius schedules.
//
// Each switch time is an activation instant seen one delay later, the
// earliest one at least a unit past its predecessor whose decay floor
// clears the stage's convergence threshold. Restricting the search to
// activation instants keeps every stage schedule anchored on a period
// boundary, which the floor construction requires; the floor is flat
// between plateaus near those instants, so the restriction costs at most
// one period of waiting. The recursion runs in the design order: stage
// threshold, next switch time, then saturation radius, which needs the
// next time. When no qualifying time remains before the horizon the
// stage count is truncated and the last stage runs to the end.
inline SwitchPlan plan_switching(const Scenario& sc, const PlantTraces& tr,
                                 double horizon) {
  const TimeGrid& gr = tr.grid;
  const double end = std::min(horizon, gr.end());
  if (end <= sc.t0 + sc.tau + 1.0)
    throw ConfigError("horizon leaves no room for a first stage");

  SwitchPlan plan;
  plan.t0 = sc.t0;
  plan.tau = sc.tau;
  plan.L = sc.L;

  StagePlan st;
  st.m = 1;
  st.t_start = sc.t0 + sc.tau;
  st.sched = detail::stage_schedule(sc, tr, 1, sc.T.front());
  st.xi = xi_threshold(sc.L, sc.beta(st.sched.t_bar0, 1.0),
                       st.sched.kappa.value(st.sched.t_bar0));
  st.sched.xi = st.xi;

  for (;;) {
    const int m = st.m;
    bool found = false;
    double t_next = end;
    GainSchedule next_sched;
    try {
      next_sched = detail::stage_schedule(sc, tr, m + 1, st.t_start - sc.tau);
      const double thresh =
          1.0 + std::log((m + 1) * sc.beta(st.t_start, m + 1.0) * std::sqrt(sc.L));
      for (double Tv : sc.T) {
        const double c = Tv + sc.tau;
        if (c < st.t_start + 1.0 - 1e-9) continue;
        if (c >= end - 1e-9) break;
        if (next_sched.kappa.value(c) >= thresh) {
          const std::size_t k = gr.floor_index(c + 0.5 * gr.step);
          t_next = gr.t(k);
          found = true;
          break;
        }
      }
    } catch (const SynthesisError&) {
      found = false;
    } catch (const HypothesisError&) {
      found = false;
    }

    if (!found) {
      st.t_end = end;
      st.zeta = sc.beta(end, st.m) + st.xi;
      plan.times.push_back(st.t_start);
      plan.stages.push_back(std::move(st));
      plan.times.push_back(end);
      plan.m_max = m;
      plan.truncated = true;
      plan.note = "stage count truncated to " + std::to_string(m) +
                  " by the horizon";
      break;
    }

    st.t_end = t_next;
    st.zeta = sc.beta(t_next, st.m) + st.xi;
    plan.times.push_back(st.t_start);
    plan.stages.push_back(std::move(st));

    StagePlan nx;
    nx.m = m + 1;
    nx.t_start = t_next;
    nx.sched = std::move(next_sched);
    nx.xi = xi_threshold(sc.L, sc.beta(nx.sched.t_bar0, m + 1.0),
                         nx.sched.kappa.value(nx.sched.t_bar0));
    nx.sched.xi = nx.xi;
    st = std::move(nx);
  }
  return plan;
}

struct StageRun {
  int m = 0;
  double lo = 0.0, hi = 0.0;          // integrated span
  TimeGrid grid;
  std::vector<SignalTrace> z;
  SignalTrace e_norm;                 // from the first delayed sample on
  double sup_z_active = 0.0;          // over [t_m, t_{m+1}]
  double sup_e_active = 0.0;
  double sup_z_full = 0.0;            // over the whole integrated span
};

struct CompositeEstimate {
  TimeGrid grid;                      // from t_1 to the cutoff
  std::vector<SignalTrace> Z;
  std::vector<int> active;            // owning stage index per sample
  SignalTrace e_norm;
  std::vector<StageRun> stages;
};

// Runs every planned stage and assembles the composite estimate.
//
// Stage m integrates the saturated estimator on the doubled interval
// from the previous switch time to the next one, from the zero state;
// the composite hands each sample to the stage owning its interval, so
// the estimate is right-continuous with jumps only at switch times.
// Stage 1's roll-in starts one delay before data exists; its delayed
// reads hold the record's first sample, and its error is reported from
// the first delayed instant on.
inline CompositeEstimate run_switching(const Scenario& sc, const PlantTraces& tr,
                                       const SwitchPlan& plan) {
  if (plan.stages.empty()) throw ConfigError("switch plan has no stages");
  const TimeGrid& gr = tr.grid;
  const double h = gr.step;
  const double end = plan.times.back();

  CompositeEstimate out;
  out.stages.reserve(plan.stages.size());

  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const StagePlan& sp = plan.stages[i];
    const GainSchedule& g = sp.sched;
    StageRun sr;
    sr.m = sp.m;
    sr.lo = (i == 0) ? sc.t0 : plan.stages[i - 1].t_start;
    sr.hi = std::min(sp.t_end, end);

    const std::size_t k_lo = gr.exact_index(sr.lo);
    const std::size_t k_hi = gr.exact_index(sr.hi);
    if (k_lo == TimeGrid::npos || k_hi == TimeGrid::npos || k_hi <= k_lo)
      throw ConfigError("stage interval is off the plant grid");
    sr.grid = make_grid(sr.lo, sr.hi, h);

    Vec z(g.n);
    sr.z.assign(static_cast<std::size_t>(g.n), SignalTrace{});
    for (auto& trc : sr.z) {
      trc.grid = sr.grid;
      trc.samples.resize(sr.grid.count);
    }
    for (std::size_t k = 0; k < sr.grid.count; ++k) {
      const double t = sr.grid.t(k);
      for (int c = 0; c < g.n; ++c)
        sr.z[static_cast<std::size_t>(c)].samples[k] = z[c];
      if (k + 1 == sr.grid.count) break;
      if (g.find_support(t) >= 0 && min_eigenvalue(g.P(t)) < 1.0 - 1e-6)
        throw CertificateError("stage metric lost positivity at t=" + fmt_g(t));
      const int K = detail::substep_count(g, t, h);
      detail::split_step(g, t, h, K, true, sp.zeta, z);
    }

    // Delayed-state error where the delayed state exists.
    const double e_lo = std::max(sr.lo, sc.t0 + sc.tau);
    const std::size_t off = sr.grid.exact_index(e_lo);
    sr.e_norm.grid = make_grid(e_lo, sr.hi, h);
    sr.e_norm.samples.resize(sr.e_norm.grid.count);
    for (std::size_t k = 0; k < sr.e_norm.grid.count; ++k) {
      const double t = sr.e_norm.grid.t(k);
      double acc = 0.0;
      for (int c = 0; c < g.n; ++c) {
        const double ei = tr.x[static_cast<std::size_t>(c)].value(t - sc.tau) -
                          sr.z[static_cast<std::size_t>(c)].samples[k + off];
        acc += ei * ei;
      }
      sr.e_norm.samples[k] = std::sqrt(acc);
    }

    for (std::size_t k = 0; k < sr.grid.count; ++k) {
      double zn = 0.0;
      for (int c = 0; c < g.n; ++c) {
        const double v = sr.z[static_cast<std::size_t>(c)].samples[k];
        zn += v * v;
      }
      zn = std::sqrt(zn);
      sr.sup_z_full = std::max(sr.sup_z_full, zn);
      const double t = sr.grid.t(k);
      if (t >= sp.t_start - 1e-12) sr.sup_z_active = std::max(sr.sup_z_active, zn);
    }
    for (std::size_t k = 0; k < sr.e_norm.grid.count; ++k) {
      const double t = sr.e_norm.grid.t(k);
      if (t >= sp.t_start - 1e-12)
        sr.sup_e_active = std::max(sr.sup_e_active, sr.e_norm.samples[k]);
    }
    out.stages.push_back(std::move(sr));
  }

  // Composite estimate on [t_1, cutoff]: each sample from its owner.
  const double z_lo = plan.times.front();
  out.grid = make_grid(z_lo, end, h);
  const int n = plan.stages.front().sched.n;
  out.Z.assign(static_cast<std::size_t>(n), SignalTrace{});
  for (auto& trc : out.Z) {
    trc.grid = out.grid;
    trc.samples.resize(out.grid.count);
  }
  out.active.resize(out.grid.count);
  out.e_norm.grid = out.grid;
  out.e_norm.samples.resize(out.grid.count);
  for (std::size_t k = 0; k < out.grid.count; ++k) {
    const double t = out.grid.t(k);
    std::size_t owner = 0;
    for (std::size_t i = plan.stages.size(); i-- > 0;) {
      if (t >= plan.stages[i].t_start - 1e-12) {
        owner = i;
        break;
      }
    }
    const StageRun& sr = out.stages[owner];
    const std::size_t kk = sr.grid.exact_index(t);
    if (kk == TimeGrid::npos)
      throw ConfigError("composite sample is off its stage grid");
    out.active[k] = sr.m;
    double acc = 0.0;
    for (int c = 0; c < n; ++c) {
      const double zv = sr.z[static_cast<std::size_t>(c)].samples[kk];
      out.Z[static_cast<std::size_t>(c)].samples[k] = zv;
      const double ei = tr.x[static_cast<std::size_t>(c)].value(t - sc.tau) - zv;
      acc += ei * ei;
    }
    out.e_norm.samples[k] = std::sqrt(acc);
  }
  return out;
}

}  // namespace dobs
