#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dplab/io.hpp"
#include "dplab/norms.hpp"
#include "dplab/plap_solver.hpp"
#include "dplab/pme_solver.hpp"

namespace dplab {

inline constexpr const char* kVersion = "dplab 1.0.0";

/// Process exit codes shared by every subcommand.
enum ExitCode : int { exit_ok = 0, exit_verification = 2, exit_solver = 3, exit_config = 4 };

// ---------------------------------------------------------------------------
// Formatting and hashing

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ConfigError("missing file: " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::filesystem::path& p) {
  const std::string text = read_file(p);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << s;
}

// ---------------------------------------------------------------------------
// JSON field helpers

namespace detail {

inline void check_keys(const Json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

/// Numbers, or "inf" for an infinite truncation level.
inline double get_extended(const Json& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  if (!v.is_number()) throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  return v.get<double>();
}

inline Json extended(double v) { return std::isinf(v) ? Json("inf") : Json(v); }

inline GridSpec grid_from_json(const Json& j, int dim) {
  check_keys(j, {"cells", "time_steps"}, "grid");
  GridSpec g;
  const auto cells = j.at("cells").get<std::vector<int>>();
  if (static_cast<int>(cells.size()) != dim) throw ConfigError("grid cells must list one count per axis");
  for (int i = 0; i < dim; ++i) g.cells[i] = cells[i];
  g.time_steps = j.at("time_steps").get<int>();
  return g;
}

inline Json grid_to_json(const GridSpec& g, int dim) {
  return {{"cells", std::vector<int>(g.cells.begin(), g.cells.begin() + dim)}, {"time_steps", g.time_steps}};
}

inline Json parse_domain(const Json& j) {
  check_keys(j, {"lower", "upper", "T"}, "domain");
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Solver configs as JSON

inline PMEConfig pme_config_from_json(const Json& j) {
  detail::check_keys(j, {"m", "q", "k", "n_reg", "newton_tol", "newton_max_iter", "mollification_scale", "domain", "grid"},
                     "pme config");
  PMEConfig c;
  const std::string w = "pme config";
  c.m = detail::get_or(j, "m", c.m, w);
  c.q = detail::get_or(j, "q", c.q, w);
  c.k = detail::get_extended(j, "k", c.k, w);
  c.n_reg = detail::get_or(j, "n_reg", c.n_reg, w);
  c.newton_tol = detail::get_or(j, "newton_tol", c.newton_tol, w);
  c.newton_max_iter = detail::get_or(j, "newton_max_iter", c.newton_max_iter, w);
  c.mollification_scale = detail::get_or(j, "mollification_scale", c.mollification_scale, w);
  if (j.contains("domain")) c.domain = domain_from_json(detail::parse_domain(j.at("domain")));
  c.grid = j.contains("grid") ? detail::grid_from_json(j.at("grid"), c.domain.dim()) : GridSpec::uniform(c.domain.dim(), 32, 32);
  return c;
}

inline Json pme_config_to_json(const PMEConfig& c) {
  return {{"m", c.m},
          {"q", c.q},
          {"k", detail::extended(c.k)},
          {"n_reg", c.n_reg},
          {"newton_tol", c.newton_tol},
          {"newton_max_iter", c.newton_max_iter},
          {"mollification_scale", c.mollification_scale},
          {"domain", domain_to_json(c.domain)},
          {"grid", detail::grid_to_json(c.grid, c.domain.dim())}};
}

inline PLapConfig plap_config_from_json(const Json& j) {
  detail::check_keys(j, {"p", "q", "k", "eps", "newton_tol", "newton_max_iter", "mollification_scale", "domain", "grid"},
                     "plap config");
  PLapConfig c;
  const std::string w = "plap config";
  c.p = detail::get_or(j, "p", c.p, w);
  c.q = detail::get_or(j, "q", c.q, w);
  c.k = detail::get_extended(j, "k", c.k, w);
  c.eps = detail::get_or(j, "eps", c.eps, w);
  c.newton_tol = detail::get_or(j, "newton_tol", c.newton_tol, w);
  c.newton_max_iter = detail::get_or(j, "newton_max_iter", c.newton_max_iter, w);
  c.mollification_scale = detail::get_or(j, "mollification_scale", c.mollification_scale, w);
  if (j.contains("domain")) c.domain = domain_from_json(detail::parse_domain(j.at("domain")));
  c.grid = j.contains("grid") ? detail::grid_from_json(j.at("grid"), c.domain.dim()) : GridSpec::uniform(c.domain.dim(), 32, 32);
  return c;
}

inline Json plap_config_to_json(const PLapConfig& c) {
  return {{"p", c.p},
          {"q", c.q},
          {"k", detail::extended(c.k)},
          {"eps", c.eps},
          {"newton_tol", c.newton_tol},
          {"newton_max_iter", c.newton_max_iter},
          {"mollification_scale", c.mollification_scale},
          {"domain", domain_to_json(c.domain)},
          {"grid", detail::grid_to_json(c.grid, c.domain.dim())}};
}

// ---------------------------------------------------------------------------
// Ceilings file: {"version": n, "ceilings": {id: value}, "calibration": {...}}

inline Ceilings ceilings_from_json(const Json& j) {
  detail::check_keys(j, {"version", "ceilings", "calibration"}, "ceilings file");
  Ceilings c;
  c.version = detail::get_or(j, "version", 1, "ceilings file");
  for (const auto& [k, v] : j.at("ceilings").items()) {
    if (!v.is_number() || !(v.get<double>() >= 0.0)) throw ConfigError("ceiling for " + k + " must be a nonnegative number");
    c.values[k] = v.get<double>();
  }
  return c;
}

inline Ceilings load_ceilings(const std::filesystem::path& p) { return ceilings_from_json(read_json_file(p)); }

// ---------------------------------------------------------------------------
// Scenario

/// Fit of log max|u| against log t over [t_min, t_max], compared with `expected`.
struct SlopeFitSpec {
  double t_min = 0.0;
  double t_max = 0.0;  ///< 0 selects T
  double expected = -0.5;
  double tolerance = 0.1;  ///< relative
};

/// One full run per mollification scale, plus the L^1 mass at t_probe.
struct RetentionSpec {
  std::vector<double> scales;
  double t_probe = 0.0;
};

struct Scenario {
  std::string name = "scenario";
  Equation equation = Equation::pme;
  PMEConfig pme;
  PLapConfig plap;
  Json mu_desc;     ///< measure description object, or a path string
  Json sigma_desc;
  std::filesystem::path base;  ///< directory against which relative paths resolve
  ProbeSpec probes;
  std::vector<std::string> outputs{"field", "diagnostics", "probes", "verify"};
  std::string ceilings;  ///< path; empty selects the calibrated file shipped with the sources
  std::uint64_t seed = 0;
  std::optional<SlopeFitSpec> slope_fit;
  std::optional<RetentionSpec> retention;

  // resolved at parse time
  RadonMeasure mu = RadonMeasure::spacetime(2);
  RadonMeasure sigma = RadonMeasure::space(2);

  const BoxDomain& domain() const { return equation == Equation::pme ? pme.domain : plap.domain; }
  Grid make_grid() const { return equation == Equation::pme ? pme.make_grid() : plap.make_grid(); }
  bool wants(const std::string& o) const { return std::find(outputs.begin(), outputs.end(), o) != outputs.end(); }
};

namespace detail {

inline RadonMeasure resolve_measure(const Json& desc, const std::filesystem::path& base, Ambient ambient, int dim,
                                    const BoxDomain& dom, const std::string& what) {
  if (desc.is_null()) return RadonMeasure(dim, ambient);
  RadonMeasure m;
  if (desc.is_string()) {
    std::filesystem::path p = desc.get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError("missing file: " + what + " measure " + p.string());
    m = load_measure_file(p);
  } else if (desc.is_object()) {
    m = measure_from_json(desc, base, dim);
  } else {
    throw ConfigError(what + " must be a measure object or a file path");
  }
  if (m.dim() != dim) throw ConfigError(what + " dimension differs from the domain");
  if (m.ambient() != ambient)
    throw ConfigError(what + " must be a " + std::string(ambient == Ambient::space ? "space" : "space-time") + " measure");
  m.check_inside(dom);
  return m;
}

inline void check_hypotheses(const Scenario& s) {
  const int N = s.domain().dim();
  if (s.equation == Equation::pme) {
    const double m = s.pme.m, q = s.pme.q;
    if (!(m > (N - 2.0) / N))
      throw HypothesisError("hypothesis m > (N-2)/N of the porous-medium existence theory violated: m = " + fmt(m) +
                            ", N = " + std::to_string(N));
    if (q > 0.0 && !(q > std::max(1.0, m)))
      throw HypothesisError("hypothesis q > max(1, m) of the porous-medium pointwise bounds violated: q = " + fmt(q) +
                            ", m = " + fmt(m));
  } else {
    const double p = s.plap.p, q = s.plap.q;
    if (!(p > 2.0)) throw HypothesisError("hypothesis p > 2 of the p-Laplace theory violated: p = " + fmt(p));
    if (q > 0.0 && !(q > p - 1.0))
      throw HypothesisError("hypothesis q > p - 1 of the p-Laplace theory violated: q = " + fmt(q) + ", p = " + fmt(p));
  }
}

}  // namespace detail

/// Validated scenario from a JSON document; `base` resolves relative file paths.
inline Scenario scenario_from_json(const Json& j, const std::filesystem::path& base = {}) {
  detail::check_keys(j, {"name", "equation", "solver", "mu", "sigma", "probes", "outputs", "ceilings", "seed", "slope_fit",
                         "retention"},
                     "scenario");
  Scenario s;
  s.base = base;
  s.name = detail::get_or<std::string>(j, "name", s.name, "scenario");
  if (s.name.empty() || s.name.find('/') != std::string::npos) throw ConfigError("scenario name must be a plain file name");
  const std::string eq = detail::get_or<std::string>(j, "equation", "pme", "scenario");
  if (eq == "pme")
    s.equation = Equation::pme;
  else if (eq == "plap")
    s.equation = Equation::plap;
  else
    throw ConfigError("equation must be 'pme' or 'plap'");
  const Json solver = j.value("solver", Json::object());
  if (s.equation == Equation::pme)
    s.pme = pme_config_from_json(solver);
  else
    s.plap = plap_config_from_json(solver);

  if (j.contains("probes")) {
    const Json& p = j.at("probes");
    detail::check_keys(p, {"stride", "time_stride", "exclusion_cells", "min_probes", "max_probes", "nodes"}, "probes");
    s.probes.stride = detail::get_or(p, "stride", s.probes.stride, "probes");
    s.probes.time_stride = detail::get_or(p, "time_stride", s.probes.time_stride, "probes");
    s.probes.exclusion_cells = detail::get_or(p, "exclusion_cells", s.probes.exclusion_cells, "probes");
    s.probes.min_probes = detail::get_or(p, "min_probes", s.probes.min_probes, "probes");
    s.probes.max_probes = detail::get_or(p, "max_probes", s.probes.max_probes, "probes");
    s.probes.quad.nodes = detail::get_or(p, "nodes", s.probes.quad.nodes, "probes");
  }
  if (s.probes.stride < 1 || s.probes.time_stride < 1 || s.probes.min_probes < 0 || s.probes.quad.nodes < 16 ||
      !(s.probes.exclusion_cells >= 0.0))
    throw ConfigError("probe lattice parameters out of range");
  if (j.contains("outputs")) {
    s.outputs = j.at("outputs").get<std::vector<std::string>>();
    static const std::set<std::string> known{"field", "diagnostics", "probes", "verify"};
    for (const auto& o : s.outputs)
      if (!known.count(o)) throw ConfigError("unknown output '" + o + "'");
  }
  s.ceilings = detail::get_or<std::string>(j, "ceilings", "", "scenario");
  if (!s.ceilings.empty()) {
    std::filesystem::path p = s.ceilings;
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError("missing file: ceilings " + p.string());
  }
  s.seed = detail::get_or<std::uint64_t>(j, "seed", 0, "scenario");
  s.probes.seed = s.seed;
  if (j.contains("slope_fit")) {
    const Json& f = j.at("slope_fit");
    detail::check_keys(f, {"t_min", "t_max", "expected", "tolerance"}, "slope_fit");
    SlopeFitSpec sf;
    sf.t_min = detail::get_or(f, "t_min", sf.t_min, "slope_fit");
    sf.t_max = detail::get_or(f, "t_max", sf.t_max, "slope_fit");
    sf.expected = detail::get_or(f, "expected", sf.expected, "slope_fit");
    sf.tolerance = detail::get_or(f, "tolerance", sf.tolerance, "slope_fit");
    s.slope_fit = sf;
  }
  if (j.contains("retention")) {
    const Json& r = j.at("retention");
    detail::check_keys(r, {"scales", "t_probe"}, "retention");
    RetentionSpec rs;
    rs.scales = r.at("scales").get<std::vector<double>>();
    rs.t_probe = r.at("t_probe").get<double>();
    if (rs.scales.empty()) throw ConfigError("retention needs at least one scale");
    for (std::size_t i = 1; i < rs.scales.size(); ++i)
      if (!(rs.scales[i] < rs.scales[i - 1])) throw ConfigError("retention scales must decrease");
    s.retention = rs;
  }

  detail::check_hypotheses(s);
  if (s.equation == Equation::pme)
    s.pme.validate();
  else
    s.plap.validate();
  if (s.retention && !(s.retention->t_probe > 0.0 && s.retention->t_probe < s.domain().T()))
    throw ConfigError("retention t_probe must lie in (0, T)");

  const int N = s.domain().dim();
  s.mu_desc = j.value("mu", Json());
  s.sigma_desc = j.value("sigma", Json());
  s.mu = detail::resolve_measure(s.mu_desc, base, Ambient::spacetime, N, s.domain(), "mu");
  s.sigma = detail::resolve_measure(s.sigma_desc, base, Ambient::space, N, s.domain(), "sigma");
  return s;
}

inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base = {}) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed scenario document: ") + e.what());
  }
  return scenario_from_json(j, base);
}

inline Scenario load_scenario(const std::filesystem::path& p) { return parse_scenario(read_file(p), p.parent_path()); }

/// Every field explicit, defaults included.
inline Json emit_scenario(const Scenario& s) {
  Json j;
  j["name"] = s.name;
  j["equation"] = s.equation == Equation::pme ? "pme" : "plap";
  j["solver"] = s.equation == Equation::pme ? pme_config_to_json(s.pme) : plap_config_to_json(s.plap);
  j["mu"] = s.mu_desc;
  j["sigma"] = s.sigma_desc;
  j["probes"] = {{"stride", s.probes.stride},
                 {"time_stride", s.probes.time_stride},
                 {"exclusion_cells", s.probes.exclusion_cells},
                 {"min_probes", s.probes.min_probes},
                 {"max_probes", s.probes.max_probes},
                 {"nodes", s.probes.quad.nodes}};
  j["outputs"] = s.outputs;
  j["ceilings"] = s.ceilings;
  j["seed"] = s.seed;
  if (s.slope_fit)
    j["slope_fit"] = {{"t_min", s.slope_fit->t_min},
                      {"t_max", s.slope_fit->t_max},
                      {"expected", s.slope_fit->expected},
                      {"tolerance", s.slope_fit->tolerance}};
  if (s.retention) j["retention"] = {{"scales", s.retention->scales}, {"t_probe", s.retention->t_probe}};
  return j;
}

// ---------------------------------------------------------------------------
// Running

/// Writes a measure as JSON with its densities as DPLGRID1 files next to it.
inline Json save_measure(const RadonMeasure& mu, const std::filesystem::path& dir, const std::string& stem) {
  Json j;
  j["ambient"] = mu.is_space() ? "space" : "space-time";
  j["dim"] = mu.dim();
  Json atoms = Json::array();
  for (const auto& a : mu.atoms()) {
    Json e{{"x", point_to_json(a.x, mu.dim())}, {"mass", a.mass}};
    if (!mu.is_space()) e["t"] = a.t;
    atoms.push_back(e);
  }
  j["atoms"] = atoms;
  if (mu.density()) {
    const GridField& f = *mu.density();
    const std::string file = stem + ".grid";
    save_grid_file(dir / file, f);
    j["density"] = file;
    j["domain"] = domain_to_json(f.grid.domain());
    std::vector<int> cells;
    for (int i = 0; i < f.grid.dim(); ++i) cells.push_back(f.grid.cells(i));
    j["cells"] = cells;
    j["time_steps"] = f.grid.time_steps();
  }
  if (!mu.products().empty()) {
    Json prods = Json::array();
    int k = 0;
    for (const auto& p : mu.products())
      prods.push_back({{"omega", save_measure(*p.omega, dir, stem + "_omega" + std::to_string(k++))},
                       {"F", p.F},
                       {"horizon", p.horizon}});
    j["product"] = prods;
  }
  if (mu.initial()) j["initial"] = save_measure(*mu.initial(), dir, stem + "_initial");
  return j;
}

struct SlopeFitResult {
  double slope = 0.0;
  bool pass = false;
  int points = 0;
};

inline double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// Slope of log max_x |u| against log t over the slab ends in [t_min, t_max].
inline SlopeFitResult fit_decay_slope(const SolveResult& r, const SlopeFitSpec& f) {
  const Grid& g = r.grid();
  const double t_max = f.t_max > 0.0 ? f.t_max : g.domain().T();
  std::vector<double> lt, lu;
  for (int j = 0; j < g.time_steps(); ++j) {
    const double t = g.slab_end(j);
    if (t < f.t_min * (1 - 1e-12) || t > t_max * (1 + 1e-12) || !(r.max_abs[j + 1] > 0.0)) continue;
    lt.push_back(std::log(t));
    lu.push_back(std::log(r.max_abs[j + 1]));
  }
  SlopeFitResult out;
  out.points = static_cast<int>(lt.size());
  if (lt.size() < 2) throw ConfigError("slope fit window holds fewer than two time levels");
  out.slope = least_squares_slope(lt, lu);
  out.pass = std::abs(out.slope - f.expected) <= f.tolerance * std::abs(f.expected);
  return out;
}

inline SolveResult solve_scenario(const Scenario& s) {
  return s.equation == Equation::pme ? solve_pme(s.pme, s.mu, s.sigma) : solve_plap(s.plap, s.mu, s.sigma);
}

inline EstimateInput estimate_input(const Scenario& s) {
  EstimateInput in;
  in.equation = s.equation;
  in.m = s.pme.m;
  in.p = s.plap.p;
  in.q = s.equation == Equation::pme ? s.pme.q : s.plap.q;
  in.mu = s.mu;
  in.sigma = s.sigma;
  in.probes = s.probes;
  return in;
}

inline std::filesystem::path default_ceilings_path() {
#ifdef DPLAB_SOURCE_DIR
  return std::filesystem::path(DPLAB_SOURCE_DIR) / "scenarios" / "ceilings.json";
#else
  return "scenarios/ceilings.json";
#endif
}

inline Ceilings scenario_ceilings(const Scenario& s) {
  if (s.ceilings.empty()) return load_ceilings(default_ceilings_path());
  std::filesystem::path p = s.ceilings;
  if (p.is_relative()) p = s.base / p;
  return load_ceilings(p);
}

/// Output-directory override: DPLAB_OUTPUT_DIR, when set, replaces the parent of relative run directories.
inline std::filesystem::path resolve_output_dir(const std::filesystem::path& requested) {
  const char* env = std::getenv("DPLAB_OUTPUT_DIR");
  if (env && *env && requested.is_relative()) return std::filesystem::path(env) / requested;
  return requested;
}

namespace detail {

inline std::string diagnostics_csv(const SolveResult& r, const Absorption& g) {
  std::ostringstream os;
  os << "step,t,mass,max_abs,newton_iters,residual,absorption_integral\n";
  os << "0,0," << fmt(r.mass[0]) << ',' << fmt(r.max_abs[0]) << ",0,0,0\n";
  const Grid& grid = r.grid();
  const std::size_t S = grid.space_cells();
  double absorbed = 0.0;
  for (std::size_t j = 0; j < r.newton_iterations.size(); ++j) {
    const bool done = j + 1 < r.mass.size();
    if (done && g.enabled())
      for (std::size_t c = 0; c < S; ++c)
        absorbed += std::abs(g.value(r.u.at(static_cast<int>(j), c))) * grid.cell_volume() * grid.dt();
    os << j + 1 << ',' << fmt(grid.slab_end(static_cast<int>(j))) << ',' << (done ? fmt(r.mass[j + 1]) : "nan") << ','
       << (done ? fmt(r.max_abs[j + 1]) : "nan") << ',' << r.newton_iterations[j] << ',' << fmt(r.residuals[j]) << ','
       << fmt(absorbed) << '\n';
  }
  return os.str();
}

inline std::string verify_csv(const std::vector<EstimateReport>& reps) {
  std::ostringstream os;
  os << "estimate_id,lhs,rhs,constant,pass\n";
  for (const auto& e : reps)
    os << e.id << ',' << fmt(e.lhs) << ',' << fmt(e.rhs) << ',' << fmt(e.constant) << ',' << (e.pass ? "true" : "false")
       << '\n';
  return os.str();
}

inline std::string probes_csv(const std::vector<ProbeSample>& ps, int N) {
  std::ostringstream os;
  for (int i = 0; i < N; ++i) os << 'x' << i << ',';
  os << "t,u,potential,flag,bound,decay_bound\n";
  for (const auto& p : ps) {
    for (int i = 0; i < N; ++i) os << fmt(p.x[i]) << ',';
    os << fmt(p.t) << ',' << fmt(p.u) << ',' << fmt(p.potential.value) << ',' << (p.potential.infinite ? "inf" : "ok")
       << ',' << fmt(p.bound) << ',' << fmt(p.decay) << '\n';
  }
  return os.str();
}

}  // namespace detail

struct RunOutcome {
  int exit_code = exit_ok;
  std::string status;  ///< pass, verification_failed, solver_failed, config_error
  std::string message;
  std::vector<EstimateReport> reports;
  std::optional<SlopeFitResult> slope;
  std::vector<double> retention;
  std::filesystem::path dir;
};

namespace detail {

inline Json reports_json(const std::vector<EstimateReport>& reps) {
  Json a = Json::array();
  for (const auto& e : reps)
    a.push_back({{"id", e.id},
                 {"lhs", e.lhs},
                 {"rhs", e.rhs},
                 {"constant", std::isfinite(e.constant) ? Json(e.constant) : Json("inf")},
                 {"ceiling", e.ceiling},
                 {"pass", e.pass},
                 {"h", e.h},
                 {"dt", e.dt},
                 {"probes", e.probes}});
  return a;
}

/// Solve, write field and diagnostics, verify. Fills `out` and the manifest's solve section.
inline SolveResult single_run(const Scenario& s, const Ceilings& ceil, const std::filesystem::path& dir, RunOutcome& out,
                              Json& manifest) {
  std::filesystem::create_directories(dir);
  const SolveResult r = solve_scenario(s);
  const Absorption g{s.equation == Equation::pme ? s.pme.q : s.plap.q, s.equation == Equation::pme ? s.pme.k : s.plap.k};
  Json solve{{"failed", r.failed},
             {"message", r.message},
             {"failed_step", r.failed_step},
             {"mollification_scale", r.mollification_scale},
             {"sigma_mass", r.sigma_mass},
             {"mu_mass", r.mu_mass},
             {"absorption_integral", r.absorption_integral},
             {"power_integral", r.power_integral},
             {"sup_mass", r.sup_mass()}};
  manifest["solve"] = solve;
  if (s.wants("diagnostics")) write_text(dir / "diagnostics.csv", diagnostics_csv(r, g));
  if (s.wants("field") && !r.failed) {
    save_grid_file(dir / "u.grid", r.u);
    save_grid_file(dir / "u0.grid", r.u0);
  }
  if (r.failed) {
    out.exit_code = exit_solver;
    out.status = "solver_failed";
    out.message = r.message;
    return r;
  }
  if (s.slope_fit) {
    out.slope = fit_decay_slope(r, *s.slope_fit);
    manifest["slope_fit"] = {{"slope", out.slope->slope},
                             {"expected", s.slope_fit->expected},
                             {"tolerance", s.slope_fit->tolerance},
                             {"points", out.slope->points},
                             {"pass", out.slope->pass}};
  }
  if (s.wants("verify") || s.wants("probes")) {
    std::vector<ProbeSample> samples;
    out.reports = verify_estimates(r, estimate_input(s), ceil, &samples);
    if (s.wants("probes")) write_text(dir / "probes.csv", probes_csv(samples, s.domain().dim()));
    if (s.wants("verify")) write_text(dir / "verify.csv", verify_csv(out.reports));
    manifest["estimates"] = reports_json(out.reports);
  }
  bool pass = !out.slope || out.slope->pass;
  for (const auto& e : out.reports) pass = pass && e.pass;
  out.exit_code = pass ? exit_ok : exit_verification;
  out.status = pass ? "pass" : "verification_failed";
  return r;
}

}  // namespace detail

/// Runs a validated scenario into `dir`: solve, probe potentials, verify, manifest.
/// With a retention block, one subdirectory per mollification scale and retention.csv.
inline RunOutcome run_scenario(const Scenario& s, const std::filesystem::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  out.dir = dir;
  std::filesystem::create_directories(dir);

  // scenario echo with the measures copied into the run directory
  Scenario echo = s;
  echo.mu_desc = "mu.json";
  echo.sigma_desc = "sigma.json";
  if (echo.ceilings.empty()) echo.ceilings = default_ceilings_path().string();
  else if (std::filesystem::path(echo.ceilings).is_relative()) echo.ceilings = std::filesystem::absolute(s.base / s.ceilings).string();
  const Json echo_json = emit_scenario(echo);
  write_text(dir / "mu.json", save_measure(s.mu, dir, "mu").dump(2) + "\n");
  write_text(dir / "sigma.json", save_measure(s.sigma, dir, "sigma").dump(2) + "\n");
  write_text(dir / "scenario.json", echo_json.dump(2) + "\n");

  Json manifest;
  manifest["version"] = kVersion;
  manifest["compiler"] = __VERSION__;
  manifest["scenario"] = echo_json;
  std::string hashed = emit_scenario(s).dump();
  for (const char* f : {"mu.json", "sigma.json", "mu.grid", "sigma.grid"})
    if (std::filesystem::exists(dir / f)) hashed += read_file(dir / f);
  manifest["input_hash"] = "fnv1a64:" + hex64(fnv1a(hashed));

  try {
    const Ceilings ceil = scenario_ceilings(s);
    manifest["ceilings_version"] = ceil.version;
    if (s.retention) {
      std::ostringstream csv;
      csv << "scale,retention,converged,exit_code\n";
      Json runs = Json::array();
      out.exit_code = exit_ok;
      for (std::size_t i = 0; i < s.retention->scales.size(); ++i) {
        Scenario sub = s;
        sub.retention.reset();
        const double sc = s.retention->scales[i];
        (s.equation == Equation::pme ? sub.pme.mollification_scale : sub.plap.mollification_scale) = sc;
        const auto sub_dir = dir / ("scale_" + std::to_string(i));
        RunOutcome o;
        Json m;
        const SolveResult r = detail::single_run(sub, ceil, sub_dir, o, m);
        const double ret = r.failed ? std::numeric_limits<double>::quiet_NaN() : mass_at(r, s.retention->t_probe);
        out.retention.push_back(ret);
        csv << fmt(sc) << ',' << fmt(ret) << ',' << (o.exit_code != exit_solver ? "true" : "false") << ',' << o.exit_code
            << '\n';
        m["exit_code"] = o.exit_code;
        m["status"] = o.status;
        write_text(sub_dir / "manifest.json", m.dump(2) + "\n");
        runs.push_back({{"scale", sc}, {"dir", sub_dir.filename().string()}, {"exit_code", o.exit_code}, {"retention", ret}});
        out.exit_code = std::max(out.exit_code, o.exit_code);
      }
      write_text(dir / "retention.csv", csv.str());
      manifest["retention"] = runs;
      out.status = out.exit_code == exit_ok ? "pass" : out.exit_code == exit_solver ? "solver_failed" : "verification_failed";
    } else {
      detail::single_run(s, ceil, dir, out, manifest);
    }
  } catch (const ConfigError& e) {
    out.exit_code = exit_config;
    out.status = "config_error";
    out.message = e.what();
  } catch (const SolverFailure& e) {
    out.exit_code = exit_solver;
    out.status = "solver_failed";
    out.message = e.what();
  }
  manifest["status"] = out.status;
  manifest["exit_code"] = out.exit_code;
  manifest["message"] = out.message;
  manifest["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

/// Re-verifies a run directory written by run_scenario against `ceil`.
inline std::vector<EstimateReport> verify_run_dir(const std::filesystem::path& dir, const Ceilings& ceil) {
  const Scenario s = load_scenario(dir / "scenario.json");
  const Json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("solve") || manifest.at("solve").at("failed").get<bool>())
    throw PreconditionError("run directory holds no converged solve");
  if (!std::filesystem::exists(dir / "u.grid")) throw ConfigError("missing file: " + (dir / "u.grid").string());
  const Grid g = s.make_grid();
  SolveResult r;
  r.u = from_raw(load_raw_grid_file(dir / "u.grid"), g);
  r.u0 = from_raw(load_raw_grid_file(dir / "u0.grid"), g);
  if (r.u.space_only || !r.u0.space_only) throw ConfigError("field files do not match the scenario grid");
  r.mass.push_back(r.u0.abs_integral());
  for (int j = 0; j < g.time_steps(); ++j) r.mass.push_back(r.u.slice(j).abs_integral());
  const Json& sv = manifest.at("solve");
  r.absorption_integral = sv.at("absorption_integral").get<double>();
  r.power_integral = sv.at("power_integral").get<double>();
  r.sigma_mass = total_variation(s.sigma);
  r.mu_mass = total_variation(s.mu);
  return verify_estimates(r, estimate_input(s), ceil);
}

// ---------------------------------------------------------------------------
// Sweeps

/// Absorption exponents used by the standard sweep.
inline double subcritical_q(double m, int N) { return 0.5 * (std::max(1.0, m) + m + 2.0 / N); }
inline double supercritical_q(double m, int N) { return m + 2.0 / N + 1.0; }

/// Space measure with a cos^2 bump density of the given mass on a fixed reference grid of the unit cube.
inline RadonMeasure bump_density(int N, const Point& c, double radius, double mass, int cells) {
  const Grid g(BoxDomain::cube(N, 0.0, 1.0, 1.0), GridSpec::uniform(N, cells, 1));
  GridField f = GridField::space(g);
  double total = 0.0;
  for (std::size_t s = 0; s < f.size(); ++s) {
    const double r = distance(g.center(s), c, N) / radius;
    if (r < 1.0) f.values[s] = std::pow(std::cos(0.5 * std::numbers::pi * r), 2);
    total += f.values[s] * g.cell_volume();
  }
  for (double& v : f.values) v *= mass / total;
  RadonMeasure m = RadonMeasure::space(N);
  m.set_density(f);
  return m;
}

/// m in {0.8, 1, 2}, q in {off, sub, super}, N in {1, 2}, signed data of total variation 1.8.
/// Without absorption and for subcritical q the data are atoms. Atoms are not admissible
/// for supercritical q, so those runs use bounded densities with the same masses, places and times.
/// `refine` doubles space and time resolution that many times, and the probe strides with them.
inline std::vector<Scenario> standard_sweep(int refine = 0) {
  std::vector<Scenario> out;
  for (int N : {1, 2})
    for (double m : {0.8, 1.0, 2.0})
      for (int qi = 0; qi < 3; ++qi) {
        const double q = qi == 0 ? 0.0 : qi == 1 ? subcritical_q(m, N) : supercritical_q(m, N);
        auto pt = [N](double a, double b) { return N == 1 ? Json::array({a}) : Json::array({a, b}); };
        const int n = (N == 1 ? 64 : 32) << refine;
        const int steps = (N == 1 ? 32 : 16) << refine;
        Json solver{{"m", m},
                    {"q", q},
                    {"domain", {{"lower", std::vector<double>(N, 0.0)}, {"upper", std::vector<double>(N, 1.0)}, {"T", 0.25}}},
                    {"grid", {{"cells", std::vector<int>(N, n)}, {"time_steps", steps}}}};
        char name[64];
        std::snprintf(name, sizeof name, "N%d_m%g_%s", N, m, qi == 0 ? "qoff" : qi == 1 ? "qsub" : "qsuper");
        // the probe lattice is fixed in physical units across refinement levels
        Json probes{{"stride", 2 << refine}, {"time_stride", 2 << refine}, {"exclusion_cells", 3 << refine}};
        Json j{{"name", name}, {"equation", "pme"}, {"solver", solver}, {"probes", probes}};
        if (qi < 2) {
          Json sigma{{"ambient", "space"}, {"dim", N}, {"atoms", Json::array()}};
          Json mu{{"ambient", "space-time"}, {"dim", N}, {"atoms", Json::array()}};
          sigma["atoms"].push_back({{"x", pt(0.4, 0.45)}, {"mass", 1.0}});
          mu["atoms"].push_back({{"x", pt(0.7, 0.6)}, {"t", 0.06}, {"mass", 0.5}});
          mu["atoms"].push_back({{"x", pt(0.25, 0.7)}, {"t", 0.12}, {"mass", -0.3}});
          j["sigma"] = sigma;
          j["mu"] = mu;
          out.push_back(scenario_from_json(j));
        } else {
          Scenario s = scenario_from_json(j);
          const int ref_cells = N == 1 ? 256 : 128;
          // wide bumps keep u^2 dt of order one, so the stiff absorption layer is resolved
          s.sigma = bump_density(N, {0.4, 0.45, 0}, 0.35, 1.0, ref_cells);
          // slab profiles on 25 intervals of (0, 0.25): unit mass over (0.04, 0.12) and (0.10, 0.18)
          std::vector<double> F1(25, 0.0), F2(25, 0.0);
          for (int i = 4; i < 12; ++i) F1[i] = 12.5;
          for (int i = 10; i < 18; ++i) F2[i] = 12.5;
          s.mu = RadonMeasure::spacetime(N);
          s.mu.add_product(bump_density(N, {0.7, 0.6, 0}, 0.2, 0.5, ref_cells), F1, 0.25);
          s.mu.add_product(bump_density(N, {0.25, 0.7, 0}, 0.2, -0.3, ref_cells), F2, 0.25);
          s.sigma_desc = "generated: cos^2 bump density";
          s.mu_desc = "generated: cos^2 bump densities times slab profiles";
          out.push_back(std::move(s));
        }
      }
  return out;
}

/// Runs scenarios in parallel, each into dir/<name>; returns outcomes in input order.
inline std::vector<RunOutcome> run_sweep(const std::vector<Scenario>& scenarios, const std::filesystem::path& dir,
                                         int jobs) {
  std::set<std::string> names;
  for (const auto& s : scenarios)
    if (!names.insert(s.name).second) throw ConfigError("duplicate scenario name in sweep: " + s.name);
  std::vector<RunOutcome> out(scenarios.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) out[i] = run_scenario(scenarios[i], dir / scenarios[i].name);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(scenarios.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv << "name,status,exit_code\n";
  for (std::size_t i = 0; i < scenarios.size(); ++i)
    csv << scenarios[i].name << ',' << out[i].status << ',' << out[i].exit_code << '\n';
  write_text(dir / "summary.csv", csv.str());
  return out;
}

/// Collects verify.csv files below `dir` into one table: run,estimate_id,lhs,rhs,constant,pass.
struct ReportRow {
  std::string run, id;
  double lhs = 0.0, rhs = 0.0, constant = 0.0;
  bool pass = false;
};

inline std::vector<ReportRow> collect_report(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "verify.csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ReportRow> rows;
  for (const auto& f : files) {
    std::ifstream is(f);
    std::string line;
    std::getline(is, line);
    const std::string run = std::filesystem::relative(f.parent_path(), dir).generic_string();
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, lhs, rhs, c, pass;
      std::getline(ss, id, ',');
      std::getline(ss, lhs, ',');
      std::getline(ss, rhs, ',');
      std::getline(ss, c, ',');
      std::getline(ss, pass, ',');
      rows.push_back({run, id, std::stod(lhs), std::stod(rhs), std::stod(c), pass == "true"});
    }
  }
  return rows;
}

}  // namespace dplab
