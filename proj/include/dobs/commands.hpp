#pragma once

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dobs/certify.hpp"
#include "dobs/config.hpp"
#include "dobs/csv.hpp"
#include "dobs/observer.hpp"
#include "dobs/plant.hpp"
#include "dobs/switching.hpp"
#include "dobs/synthesis.hpp"

namespace dobs {

// One exit code per failure family, shared by every command.
//   0 all good, 2 configuration, 3 standing-hypothesis violation,
//   4 synthesis failure, 5 certificate violation, 1 anything else.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const HypothesisError*>(&e)) return 3;
  if (dynamic_cast<const SynthesisError*>(&e)) return 4;
  if (dynamic_cast<const CertificateError*>(&e)) return 5;
  return 1;
}

namespace detail {

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string artifact_path(const RunConfig& rc, const char* name) {
  std::filesystem::create_directories(rc.out_dir);
  return (std::filesystem::path(rc.out_dir) / name).string();
}

}  // namespace detail

inline void print_certificate_report(std::ostream& log,
                                     const CertificateReport& rep) {
  using detail::fmt6;
  log << "samples checked          " << rep.samples << "\n";
  log << "metric eigenvalue slack  " << fmt6(rep.min_eig_slack) << "\n";
  log << "start metric norm excess " << fmt6(rep.p0_norm_excess) << "\n";
  log << "decay integral gap       " << fmt6(rep.min_decay_gap) << "\n";
  log << "margin integral gap      " << fmt6(rep.min_margin_gap) << "\n";
  log << "kernel inequality worst  " << fmt6(rep.worst_kernel) << "\n";
  log << "full inequality worst    " << fmt6(rep.worst_full) << "\n";
  log << "determinant identity rel " << fmt6(rep.worst_det_rel) << "\n";
  log << "collar decay slack       " << fmt6(rep.min_collar_slack) << "\n";
  log << "off collar drift worst   " << fmt6(rep.worst_off_collar) << "\n";
  log << "injection rate min       " << fmt6(rep.min_phi) << "\n";
  log << "joint discontinuity max  " << fmt6(rep.worst_joint_gap) << "\n";
  log << "floor plateau error max  " << fmt6(rep.worst_kappa_exact) << "\n";
  for (const std::string& f : rep.failures) log << "violation: " << f << "\n";
  log << "violations               " << rep.violations << "\n";
  log << (rep.ok ? "result pass\n" : "result fail\n");
}

inline int cmd_simulate(const RunConfig& rc, std::ostream& log) {
  const Scenario& sc = rc.sc;
  const PlantTraces tr = simulate_plant(sc);
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= sc.sys.n; ++i) cols.push_back("x" + std::to_string(i));
  cols.push_back("y");
  cols.push_back("u");
  const std::string path = detail::artifact_path(rc, "plant.csv");
  CsvFile csv(path, cols);
  std::size_t rows = 0;
  std::vector<double> vals(cols.size());
  for (std::size_t k = 0; k < tr.grid.count;
       k += static_cast<std::size_t>(rc.stride)) {
    vals[0] = tr.grid.t(k);
    for (int i = 0; i < sc.sys.n; ++i)
      vals[static_cast<std::size_t>(i) + 1] = tr.x[static_cast<std::size_t>(i)].samples[k];
    vals[cols.size() - 2] = tr.y.samples[k];
    vals[cols.size() - 1] = tr.u.samples[k];
    csv.row(vals);
    ++rows;
  }
  log << "plant trace " << rows << " rows into " << path << "\n";
  return 0;
}

inline int cmd_synthesize(const RunConfig& rc, std::ostream& log) {
  const Scenario& sc = rc.sc;
  const PlantTraces tr = simulate_plant(sc);
  GainSchedule g = synthesize(sc, tr);
  log << "windows " << g.plans.size() << ", schedule from t = "
      << detail::fmt6(g.t_bar0) << "\n";

  const int n = g.n;
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j)
      cols.push_back("P" + std::to_string(i) + std::to_string(j));
  cols.push_back("d");
  cols.push_back("d_bar");
  cols.push_back("phi");
  cols.push_back("kappa");
  cols.push_back("window_id");
  const std::string path = detail::artifact_path(rc, "schedule.csv");
  CsvFile csv(path, cols);
  std::size_t rows = 0;
  std::vector<double> vals(cols.size());
  const std::size_t k0 = tr.grid.exact_index(g.t_bar0);
  if (k0 == TimeGrid::npos) throw ConfigError("schedule start is off the grid");
  for (std::size_t k = k0; k < tr.grid.count;
       k += static_cast<std::size_t>(rc.stride)) {
    const double t = tr.grid.t(k);
    vals[0] = t;
    const Mat P = g.P(t);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        vals[1 + static_cast<std::size_t>(i * n + j)] = P(i, j);
    std::size_t c = 1 + static_cast<std::size_t>(n * n);
    vals[c++] = g.d(t);
    vals[c++] = g.d_bar(t);
    vals[c++] = g.phi(t);
    vals[c++] = g.kappa.value(t);
    vals[c] = static_cast<double>(g.window_id(t));
    csv.row(vals);
    ++rows;
  }
  log << "gain schedule " << rows << " rows into " << path << "\n";

  const CertificateReport rep = certify(g, sc, tr);
  print_certificate_report(log, rep);
  return rep.ok ? 0 : 5;
}

inline int cmd_observe(const RunConfig& rc, std::ostream& log) {
  const Scenario& sc = rc.sc;
  const PlantTraces tr = simulate_plant(sc);
  GainSchedule g = synthesize(sc, tr);
  const ObserverRun run = run_observer(sc, tr, g);

  const int n = g.n;
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= n; ++i) cols.push_back("z" + std::to_string(i));
  cols.push_back("e_norm");
  cols.push_back("envelope");
  cols.push_back("xi");
  cols.push_back("in_tube");
  const std::string path = detail::artifact_path(rc, "observer.csv");
  CsvFile csv(path, cols);
  std::size_t rows = 0;
  std::vector<double> vals(cols.size());
  double worst_ratio = 0.0, sup_e = 0.0;
  for (std::size_t k = 0; k < run.grid.count; ++k) {
    const double e = run.e_norm.samples[k];
    sup_e = std::max(sup_e, e);
    if (run.bound.samples[k] > 0.0)
      worst_ratio = std::max(worst_ratio, e / run.bound.samples[k]);
    if (k % static_cast<std::size_t>(rc.stride)) continue;
    vals[0] = run.grid.t(k);
    for (int i = 0; i < n; ++i)
      vals[static_cast<std::size_t>(i) + 1] = run.z[static_cast<std::size_t>(i)].samples[k];
    std::size_t c = static_cast<std::size_t>(n) + 1;
    vals[c++] = e;
    vals[c++] = run.bound.samples[k];
    vals[c++] = run.xi_used;
    vals[c] = e < run.xi_used ? 1.0 : 0.0;
    csv.row(vals);
    ++rows;
  }
  log << "observer run " << rows << " rows into " << path << "\n";
  log << "xi " << detail::fmt6(run.xi_used) << ", sup error "
      << detail::fmt6(sup_e) << ", worst error to envelope ratio "
      << detail::fmt6(worst_ratio) << "\n";
  return 0;
}

inline int cmd_switch(const RunConfig& rc, std::ostream& log) {
  const Scenario& sc = rc.sc;
  const PlantTraces tr = simulate_plant(sc);
  const SwitchPlan plan = plan_switching(sc, tr, sc.horizon);
  const CompositeEstimate ce = run_switching(sc, tr, plan);

  if (plan.truncated) log << "note: " << plan.note << "\n";
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const StagePlan& sp = plan.stages[i];
    const StageRun& sr = ce.stages[i];
    log << "stage " << sp.m << ": [" << detail::fmt6(sp.t_start) << ", "
        << detail::fmt6(sp.t_end) << ") xi " << detail::fmt6(sp.xi) << " zeta "
        << detail::fmt6(sp.zeta) << " sup|e|*m "
        << detail::fmt6(sr.sup_e_active * sp.m) << " sup|z|/zeta "
        << detail::fmt6(sr.sup_z_full / sp.zeta) << "\n";
  }

  const int n = sc.sys.n;
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= n; ++i) cols.push_back("Z" + std::to_string(i));
  cols.push_back("active_m");
  cols.push_back("e_norm");
  cols.push_back("stage_bound");
  const std::string path = detail::artifact_path(rc, "switching.csv");
  CsvFile csv(path, cols);
  std::size_t rows = 0;
  std::vector<double> vals(cols.size());
  for (std::size_t k = 0; k < ce.grid.count;
       k += static_cast<std::size_t>(rc.stride)) {
    vals[0] = ce.grid.t(k);
    for (int i = 0; i < n; ++i)
      vals[static_cast<std::size_t>(i) + 1] = ce.Z[static_cast<std::size_t>(i)].samples[k];
    std::size_t c = static_cast<std::size_t>(n) + 1;
    vals[c++] = static_cast<double>(ce.active[k]);
    vals[c++] = ce.e_norm.samples[k];
    vals[c] = 1.0 / static_cast<double>(ce.active[k]);
    csv.row(vals);
    ++rows;
  }
  log << "composite estimate " << rows << " rows into " << path << "\n";
  return 0;
}

inline int cmd_verify(const RunConfig& rc, std::ostream& log) {
  const Scenario& sc = rc.sc;
  const PlantTraces tr = simulate_plant(sc);
  GainSchedule g = synthesize(sc, tr);
  const CertificateReport rep = certify(g, sc, tr);
  print_certificate_report(log, rep);
  return rep.ok ? 0 : 5;
}

inline int run_command(const std::string& cmd, const RunConfig& rc,
                       std::ostream& log) {
  if (cmd == "simulate") return cmd_simulate(rc, log);
  if (cmd == "synthesize") return cmd_synthesize(rc, log);
  if (cmd == "observe") return cmd_observe(rc, log);
  if (cmd == "switch") return cmd_switch(rc, log);
  if (cmd == "verify") return cmd_verify(rc, log);
  throw ConfigError("unknown command '" + cmd + "'");
}

}  // namespace dobs
