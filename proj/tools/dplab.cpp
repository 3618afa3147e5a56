#include <iostream>
#include <map>

#include "CLI11.hpp"

#include "dplab/capacity.hpp"
#include "dplab/potentials.hpp"
#include "dplab/scenario.hpp"

using namespace dplab;
namespace fs = std::filesystem;

namespace {

std::ostream& out_stream(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw Error("cannot write " + path);
  return file;
}

RadonMeasure optional_measure(const std::string& path, int dim, Ambient a, const BoxDomain& dom) {
  if (path.empty()) return RadonMeasure(dim, a);
  RadonMeasure m = load_measure_file(path);
  if (m.dim() != dim || m.ambient() != a) throw ConfigError(path + ": measure dimension or ambient does not match");
  m.check_inside(dom);
  return m;
}

int write_solve(const SolveResult& r, double q, double k, const std::string& out_dir) {
  const fs::path dir = resolve_output_dir(out_dir);
  fs::create_directories(dir);
  write_text(dir / "diagnostics.csv", detail::diagnostics_csv(r, Absorption{q, k}));
  if (r.failed) {
    std::cerr << "solver failure: " << r.message << '\n';
    return exit_solver;
  }
  save_grid_file(dir / "u.grid", r.u);
  save_grid_file(dir / "u0.grid", r.u0);
  return exit_ok;
}

/// Set file (JSON): {"space_dim": N, "spacetime": bool, "h": [...], "origin": [...], "cells": [[i, j, ...], ...]}.
CompactSet load_set(const fs::path& p) {
  const Json j = read_json_file(p);
  detail::check_keys(j, {"space_dim", "spacetime", "h", "origin", "cells"}, "set file");
  CompactSet k;
  k.space_dim = j.at("space_dim").get<int>();
  k.spacetime = j.value("spacetime", false);
  if (k.space_dim < 1 || k.space_dim > 3) throw ConfigError("space_dim must be 1, 2 or 3");
  const auto h = j.at("h").get<std::vector<double>>();
  const auto o = j.value("origin", std::vector<double>(k.axes(), 0.0));
  if (static_cast<int>(h.size()) != k.axes() || static_cast<int>(o.size()) != k.axes())
    throw ConfigError("h and origin need one entry per lattice axis");
  for (int i = 0; i < k.axes(); ++i) {
    k.h[i] = h[i];
    k.origin[i] = o[i];
  }
  for (const auto& c : j.at("cells")) {
    const auto v = c.get<std::vector<long>>();
    if (static_cast<int>(v.size()) != k.axes()) throw ConfigError("cell index has the wrong number of axes");
    LatticeIndex ix{};
    for (int i = 0; i < k.axes(); ++i) ix[i] = static_cast<int>(v[i]);
    k.cells.push_back(ix);
  }
  return k;
}

/// Points CSV: one row per point, x0..x_{N-1}[, t].
std::vector<SpaceTimePoint> load_points(const fs::path& p, int N, bool timed) {
  std::vector<SpaceTimePoint> pts;
  for (const auto& row : read_numeric_csv(p)) {
    if (static_cast<int>(row.size()) < N + (timed ? 1 : 0)) throw ConfigError("points file row too short");
    SpaceTimePoint q;
    for (int i = 0; i < N; ++i) q.x[i] = row[i];
    q.t = timed ? row[N] : 0.0;
    pts.push_back(q);
  }
  return pts;
}

void print_outcome(const RunOutcome& o) {
  std::cout << o.dir.string() << ": " << o.status;
  if (!o.message.empty()) std::cout << " (" << o.message << ')';
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure-data porous-medium and p-Laplace laboratory"};
  app.require_subcommand(1);

  // solve-pme / solve-plap
  std::string config_file, measure_file, sigma_file, out_dir = "out";
  double p_flag = 0.0, eps_flag = -1.0;
  auto* pme = app.add_subcommand("solve-pme", "Solve the porous-medium problem with measure data");
  auto* plap = app.add_subcommand("solve-plap", "Solve the p-Laplace problem with measure data");
  for (auto* sc : {pme, plap}) {
    sc->add_option("--config", config_file, "Solver config JSON")->required()->check(CLI::ExistingFile);
    sc->add_option("--measure", measure_file, "Space-time source measure file")->check(CLI::ExistingFile);
    sc->add_option("--sigma", sigma_file, "Initial measure file")->check(CLI::ExistingFile);
    sc->add_option("--out", out_dir, "Output directory");
  }
  plap->add_option("--p", p_flag, "Override p");
  plap->add_option("--eps", eps_flag, "Override the gradient regularisation");

  // potential
  std::string kind = "parabolic", points_file;
  double R = 1.0, pp = 3.0;
  int nodes = 256, levels = -1;
  std::string out_file;
  auto* pot = app.add_subcommand("potential", "Evaluate truncated potentials of a measure");
  pot->add_option("--kind", kind, "parabolic | elliptic | pp")->check(CLI::IsMember({"parabolic", "elliptic", "pp"}));
  pot->add_option("--R", R, "Truncation radius (base radius for pp)");
  pot->add_option("--p", pp, "Exponent p for pp");
  pot->add_option("--points", points_file, "CSV of points x0..x_{N-1}, t")->required()->check(CLI::ExistingFile);
  pot->add_option("--measure", measure_file, "Measure file")->required()->check(CLI::ExistingFile);
  pot->add_option("--nodes", nodes, "Quadrature nodes");
  pot->add_option("--levels", levels, "Dyadic levels for pp (default: down to the density cell width, else 8)");
  pot->add_option("--out", out_file, "Output CSV (default stdout)");

  // capacity
  std::string cap_kind = "bessel", set_file;
  double alpha = 1.0, s_exp = 2.0, a_exp = 2.0, b_exp = 2.0;
  auto* cap = app.add_subcommand("capacity", "Estimate a discrete capacity of a lattice set");
  cap->add_option("--kind", cap_kind, "bessel | parabolic")->check(CLI::IsMember({"bessel", "parabolic"}));
  cap->add_option("--alpha", alpha, "Bessel order");
  cap->add_option("--s", s_exp, "Bessel integrability exponent");
  cap->add_option("--a", a_exp, "Space exponent (parabolic)");
  cap->add_option("--b", b_exp, "Time exponent (parabolic)");
  cap->add_option("--set", set_file, "Set file (JSON cell-index list)")->required()->check(CLI::ExistingFile);
  cap->add_option("--out", out_file, "Output CSV (default stdout)");

  // verify
  std::string run_dir, ceilings_file;
  auto* ver = app.add_subcommand("verify", "Check the a-priori and pointwise estimates on a run directory");
  ver->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  ver->add_option("--ceilings", ceilings_file, "Ceilings JSON")->check(CLI::ExistingFile);
  ver->add_option("--out", out_file, "Output CSV (default stdout)");

  // run
  std::string scenario_file;
  auto* run = app.add_subcommand("run", "Run one scenario: solve, potentials, verification, manifest");
  run->add_option("scenario", scenario_file, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Run directory (default out/<name>)");

  // sweep
  std::vector<std::string> scenario_files;
  int jobs = 1, refine = 0;
  bool standard = false;
  auto* sweep = app.add_subcommand("sweep", "Run scenarios in parallel, one directory each");
  sweep->add_option("scenarios", scenario_files, "Scenario JSON files")->check(CLI::ExistingFile);
  sweep->add_flag("--standard", standard, "Add the standard m, q, N sweep");
  sweep->add_option("--refine", refine, "Refinement level of the standard sweep");
  sweep->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);
  sweep->add_option("--out", out_dir, "Sweep directory");

  // report
  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Tabulate verify.csv files below a directory");
  rep->add_option("--dir", report_dir, "Run or sweep directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", out_file, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_config;
  }

  try {
    if (pme->parsed()) {
      const PMEConfig c = pme_config_from_json(read_json_file(config_file));
      const int N = c.domain.dim();
      const auto r = solve_pme(c, optional_measure(measure_file, N, Ambient::spacetime, c.domain),
                               optional_measure(sigma_file, N, Ambient::space, c.domain));
      return write_solve(r, c.q, c.k, out_dir);
    }
    if (plap->parsed()) {
      PLapConfig c = plap_config_from_json(read_json_file(config_file));
      if (p_flag > 0.0) c.p = p_flag;
      if (eps_flag >= 0.0) c.eps = eps_flag;
      const int N = c.domain.dim();
      const auto r = solve_plap(c, optional_measure(measure_file, N, Ambient::spacetime, c.domain),
                                optional_measure(sigma_file, N, Ambient::space, c.domain));
      return write_solve(r, c.q, c.k, out_dir);
    }
    if (pot->parsed()) {
      const RadonMeasure mu = load_measure_file(measure_file);
      const int N = mu.dim();
      const bool timed = kind != "elliptic";
      const auto pts = load_points(points_file, N, timed);
      std::ofstream f;
      std::ostream& os = out_stream(out_file, f);
      for (int i = 0; i < N; ++i) os << 'x' << i << ',';
      os << "t,value,flag\n";
      QuadratureOptions q;
      q.nodes = nodes;
      std::optional<DyadicSchedule> sched;
      if (kind == "pp") {
        double cw = 0.0;
        if (mu.density()) cw = mu.density()->grid.h_max();
        sched = levels >= 0 ? DyadicSchedule::levels(R, levels)
                : cw > 0.0  ? DyadicSchedule::resolved(R, cw)
                            : DyadicSchedule::levels(R, 8);
      }
      for (const auto& pt : pts) {
        double v = 0.0;
        bool inf = false;
        if (kind == "parabolic") {
          const auto r = riesz_parabolic(mu, pt.x, pt.t, R, q);
          v = r.value;
          inf = r.infinite;
        } else if (kind == "elliptic") {
          const auto r = riesz_elliptic(mu, pt.x, R, q);
          v = r.value;
          inf = r.infinite;
        } else {
          const auto r = p_potential(mu, pt.x, pt.t, pp, *sched);
          v = r.value;
          inf = r.infinite;
        }
        for (int i = 0; i < N; ++i) os << fmt(pt.x[i]) << ',';
        os << fmt(pt.t) << ',' << fmt(v) << ',' << (inf ? "inf" : "ok") << '\n';
      }
      return exit_ok;
    }
    if (cap->parsed()) {
      const CompactSet K = load_set(set_file);
      const CapacityEstimate e =
          cap_kind == "bessel" ? bessel_capacity(K, alpha, s_exp) : parabolic_capacity(K, a_exp, b_exp);
      std::ofstream f;
      std::ostream& os = out_stream(out_file, f);
      os << "kind,value,lower_bound,duality_gap,feasibility_residual,stationarity,iterations,converged,unknowns\n";
      os << cap_kind << ',' << fmt(e.value) << ',' << fmt(e.lower_bound) << ',' << fmt(e.duality_gap) << ','
         << fmt(e.feasibility_residual) << ',' << fmt(e.stationarity) << ',' << e.iterations << ','
         << (e.converged ? "true" : "false") << ',' << e.unknowns << '\n';
      return e.converged ? exit_ok : exit_solver;
    }
    if (ver->parsed()) {
      const Ceilings c = ceilings_file.empty() ? load_ceilings(default_ceilings_path()) : load_ceilings(ceilings_file);
      const auto reps = verify_run_dir(run_dir, c);
      std::ofstream f;
      out_stream(out_file, f) << detail::verify_csv(reps);
      for (const auto& e : reps)
        if (!e.pass) return exit_verification;
      return exit_ok;
    }
    if (run->parsed()) {
      const Scenario s = load_scenario(scenario_file);
      const fs::path dir = resolve_output_dir(run->count("--out") ? fs::path(out_dir) : fs::path("out") / s.name);
      const RunOutcome o = run_scenario(s, dir);
      print_outcome(o);
      return o.exit_code;
    }
    if (sweep->parsed()) {
      std::vector<Scenario> all;
      if (standard)
        for (auto& s : standard_sweep(refine)) all.push_back(std::move(s));
      for (const auto& f : scenario_files) all.push_back(load_scenario(f));
      if (all.empty()) throw ConfigError("sweep needs scenario files or --standard");
      const auto outs = run_sweep(all, resolve_output_dir(out_dir), jobs);
      int rc = exit_ok;
      for (const auto& o : outs) {
        print_outcome(o);
        rc = std::max(rc, o.exit_code);
      }
      return rc;
    }
    if (rep->parsed()) {
      const auto rows = collect_report(report_dir);
      std::ofstream f;
      std::ostream& os = out_stream(out_file, f);
      os << "run,estimate_id,lhs,rhs,constant,pass\n";
      std::map<std::string, double> worst;
      bool all_pass = true;
      for (const auto& r : rows) {
        os << r.run << ',' << r.id << ',' << fmt(r.lhs) << ',' << fmt(r.rhs) << ',' << fmt(r.constant) << ','
           << (r.pass ? "true" : "false") << '\n';
        worst[r.id] = std::max(worst[r.id], r.constant);
        all_pass = all_pass && r.pass;
      }
      for (const auto& [id, c] : worst) std::cerr << "max constant " << id << ": " << fmt(c) << '\n';
      return all_pass ? exit_ok : exit_verification;
    }
  } catch (const ConfigError& e) {  // includes hypothesis violations
    std::cerr << "configuration error: " << e.what() << '\n';
    return exit_config;
  } catch (const DomainError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return exit_config;
  } catch (const ResolutionError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return exit_config;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return exit_solver;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return exit_config;
  }
  return exit_ok;
}
