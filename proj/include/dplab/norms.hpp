#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dplab/potentials.hpp"
#include "dplab/solver_common.hpp"

namespace dplab {

// ---------------------------------------------------------------------------
// Exponents

/// Exponents and length scales of the a-priori and pointwise estimates.
/// Entries whose hypotheses fail are left empty and named in `flags`.
struct ExponentPack {
  int N = 2;
  double m = 1.0, p = 0.0, q = 0.0;
  std::optional<double> m1, m2, m3, lambda;
  std::optional<double> decay_power;  ///< 2 / (2 - N(1 - m)), fast-diffusion branch
  double d = 0.0;                     ///< diam + T^{1/2}
  std::optional<double> D;            ///< diam + T^{1/p}
  double r_u = 0.0, r_g = 0.0, q_crit = 0.0;
  double mass_power = 0.0;  ///< (N+2)/(mN+2)
  double grad_power = 0.0;  ///< (m(N+1)+1)/(mN+2)
  std::vector<std::string> flags;

  bool flagged(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

/// p <= 0 or q <= 0 mark the parameter as absent.
inline ExponentPack exponents(int N, double m, double p, double q, const BoxDomain& domain) {
  if (N != domain.dim()) throw PreconditionError("dimension differs from the domain");
  if (!(m > 0.0)) throw DomainError("m must be positive");
  ExponentPack e;
  e.N = N;
  e.m = m;
  e.p = p;
  e.q = q;
  const double diam = domain.diameter(), T = domain.T();
  e.d = diam + std::sqrt(T);
  e.r_u = m + 2.0 / N;
  e.r_g = (m * N + 2.0) / (m * N + 1.0);
  e.q_crit = m + 2.0 / N;
  e.mass_power = (N + 2.0) / (m * N + 2.0);
  e.grad_power = (m * (N + 1.0) + 1.0) / (m * N + 2.0);

  const bool m_ok = m > (N - 2.0) / N;
  if (!m_ok) e.flags.push_back("m_below_critical");
  if (q > 0.0 && !(q > std::max(1.0, m))) e.flags.push_back("q_not_above_max_1_m");
  if (m > 1.0) {
    e.m1 = (N + 2.0) * (2.0 * m * N + 1.0) / (m * (m * N + 2.0) * (1.0 + 2.0 * N));
  } else if (m_ok) {
    const double gap = 2.0 - N * (1.0 - m);
    if (gap > 0.0) {
      e.m2 = 2.0 * N * (N + 2.0) * (m + 1.0) / ((2.0 + N * m) * gap * (2.0 + N * (1.0 + m)));
      e.decay_power = 2.0 / gap;
    } else {
      e.flags.push_back("m2_undefined");
    }
  }
  if (p > 0.0) {
    if (p > 2.0) {
      e.lambda = std::min(1.0 / (p - 1.0), 1.0 / N);
      const double l = *e.lambda;
      e.m3 = (N + p) * (l + 1.0) * (p - 1.0) / (((p - 1.0) * N + p) * (1.0 + l * (p - 1.0)));
      e.D = diam + std::pow(T, 1.0 / p);
      if (q > 0.0 && !(q > p - 1.0)) e.flags.push_back("q_not_above_p_minus_1");
    } else {
      e.flags.push_back("p_not_above_2");
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Norms

/// sup_lambda lambda |{|f| > lambda}|^{1/r}, exact for piecewise-constant fields.
inline double marcinkiewicz_norm(const GridField& f, double r) {
  if (!(r > 0.0)) throw DomainError("Marcinkiewicz order must be positive");
  std::vector<double> v;
  v.reserve(f.size());
  for (double x : f.values)
    if (x != 0.0) v.push_back(std::abs(x));
  std::sort(v.begin(), v.end(), std::greater<>());
  const double cm = f.cell_measure();
  double best = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;  // ties: count all cells at this level
    best = std::max(best, v[i] * std::pow((i + 1) * cm, 1.0 / r));
  }
  return best;
}

/// L^r norm; r = inf gives the max.
inline double lebesgue_norm(const GridField& f, double r) {
  if (std::isinf(r)) {
    double m = 0.0;
    for (double x : f.values) m = std::max(m, std::abs(x));
    return m;
  }
  double s = 0.0;
  for (double x : f.values) s += std::pow(std::abs(x), r);
  return std::pow(s * f.cell_measure(), 1.0 / r);
}

/// max over time slices of the L^1 norm in space.
inline double linf_l1_norm(const GridField& u) {
  double best = 0.0;
  const std::size_t S = u.grid.space_cells();
  const double vol = u.grid.cell_volume();
  for (int j = 0; j < u.slabs(); ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < S; ++c) s += std::abs(u.at(j, c));
    best = std::max(best, s * vol);
  }
  return best;
}

/// |grad w| per cell for w = |u|^{m-1} u, forward differences, w = 0 on the walls.
inline GridField composite_gradient(const GridField& u, double m) {
  const Grid& g = u.grid;
  GridField out(g, u.space_only);
  const std::size_t S = g.space_cells();
  auto w = [m](double s) { return std::copysign(std::pow(std::abs(s), m), s); };
  for (int j = 0; j < u.slabs(); ++j)
    for (std::size_t s = 0; s < S; ++s) {
      const CellIndex c = g.multi(s);
      double acc = 0.0;
      for (int i = 0; i < g.dim(); ++i) {
        CellIndex n = c;
        n[i] += 1;
        const double here = w(u.at(j, s));
        const double d = g.in_range(n) ? (w(u.at(j, g.linear(n))) - here) / g.h(i) : -here / (0.5 * g.h(i));
        acc += d * d;
      }
      out.at(j, s) = std::sqrt(acc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Bounds (multiplicative constants not applied)

enum class PMEBranch { slow, fast };  ///< m > 1, m <= 1

inline PMEBranch branch_of(double m) { return m > 1.0 ? PMEBranch::slow : PMEBranch::fast; }

namespace detail {
inline void check_branch(const ExponentPack& e, PMEBranch b) {
  if (branch_of(e.m) != b) throw HypothesisError("branch does not match m");
  if (b == PMEBranch::slow && !e.m1) throw HypothesisError("m1 undefined for these parameters");
  if (b == PMEBranch::fast && (!e.m2 || !e.decay_power)) throw HypothesisError("m2 undefined: need 2 - N(1-m) > 0");
}
}  // namespace detail

/// m > 1: (M/d^N)^{m1} + M + 1 + P;  m <= 1: (M/d^N)^{m2} + 1 + P^{2/(2-N(1-m))}.
inline double pointwise_bound_pme(const ExponentPack& e, double mass, double potential, PMEBranch b) {
  detail::check_branch(e, b);
  if (mass < 0.0 || potential < 0.0) throw DomainError("mass and potential must be nonnegative");
  const double base = mass / std::pow(e.d, e.N);
  if (b == PMEBranch::slow) return std::pow(base, *e.m1) + mass + 1.0 + potential;
  return std::pow(base, *e.m2) + 1.0 + std::pow(potential, *e.decay_power);
}

/// 1 + D + (M/D^N)^{m3} + P.
inline double pointwise_bound_plap(const ExponentPack& e, double mass, double potential) {
  if (!e.m3 || !e.D) throw HypothesisError("m3 undefined: need p > 2");
  if (mass < 0.0 || potential < 0.0) throw DomainError("mass and potential must be nonnegative");
  return 1.0 + *e.D + std::pow(mass / std::pow(*e.D, e.N), *e.m3) + potential;
}

/// Decay bound for mu = 0; the t-term is |sigma|(Omega) / (N t^{N/2}).
inline double decay_bound(double t, double sigma_mass, const ExponentPack& e) {
  if (!(t > 0.0)) throw DomainError("decay bound needs t > 0");
  const PMEBranch b = branch_of(e.m);
  detail::check_branch(e, b);
  const double base = sigma_mass / std::pow(e.d, e.N);
  const double tt = sigma_mass / (e.N * std::pow(t, 0.5 * e.N));
  if (b == PMEBranch::slow) return std::pow(base, *e.m1) + sigma_mass + 1.0 + tt;
  return std::pow(base, *e.m2) + 1.0 + std::pow(tt, *e.decay_power);
}

/// bold-I_2^{2 diam}[omega](x)^{1/m}, the comparison profile for data omega (x) F.
inline PotentialValue good_in_time_bound(const Point& x, const RadonMeasure& omega, double m, const BoxDomain& domain) {
  if (!omega.is_space()) throw PreconditionError("omega must be a space measure");
  if (!(m > 0.0)) throw DomainError("m must be positive");
  if (total_mass(omega) < total_variation(omega) * (1.0 - 1e-12)) throw PreconditionError("omega must be nonnegative");
  const PotentialValue v = riesz_elliptic(omega, x, 2.0 * domain.diameter());
  if (v.infinite) return v;
  return {std::pow(v.value, 1.0 / m), false};
}

// ---------------------------------------------------------------------------
// Verification

struct EstimateReport {
  std::string id;
  double lhs = 0.0;
  double rhs = 0.0;
  double constant = 0.0;
  double ceiling = 0.0;
  bool pass = false;
  double h = 0.0, dt = 0.0;
  std::size_t probes = 0;  ///< probe cells used (pointwise estimates)
};

/// Per-estimate ceilings on the empirical constants, keyed by estimate id.
struct Ceilings {
  int version = 1;
  std::map<std::string, double> values;

  double at(const std::string& id) const {
    const auto it = values.find(id);
    if (it == values.end()) throw ConfigError("no ceiling for estimate " + id);
    return it->second;
  }
};

enum class Equation { pme, plap };

/// Probe lattice: every `stride`-th cell per space axis and every `time_stride`-th slab.
struct ProbeSpec {
  int stride = 2;
  int time_stride = 2;
  double exclusion_cells = 3.0;  ///< distance to atoms and walls in cell widths; also steps after a space-time atom
  int min_probes = 100;
  std::size_t max_probes = 0;  ///< 0 keeps every probe; otherwise a seeded random subset
  std::uint64_t seed = 0;
  QuadratureOptions quad;
};

struct EstimateInput {
  Equation equation = Equation::pme;
  double m = 1.0;  ///< pme
  double p = 0.0;  ///< plap
  double q = 0.0;
  RadonMeasure mu = RadonMeasure::spacetime(1);
  RadonMeasure sigma = RadonMeasure::space(1);
  ProbeSpec probes;
};

struct ProbeCell {
  int slab;
  std::size_t cell;
};

/// One probe of the pointwise check.
struct ProbeSample {
  Point x{};
  double t = 0.0;
  double u = 0.0;
  PotentialValue potential;
  double bound = 0.0;
  double decay = 0.0;  ///< decay bound, 0 when not evaluated
};

/// Off-atom, off-wall probe cells; the strides are halved until at least min_probes are found.
inline std::vector<ProbeCell> probe_lattice(const Grid& g, const RadonMeasure& mu, const RadonMeasure& sigma,
                                            const ProbeSpec& spec) {
  std::vector<Point> atoms;
  for (const auto& a : mu.atoms()) atoms.push_back(a.x);
  for (const auto& a : sigma.atoms()) atoms.push_back(a.x);
  if (mu.initial())
    for (const auto& a : mu.initial()->atoms()) atoms.push_back(a.x);
  for (const auto& pp : mu.products())
    for (const auto& a : pp.omega->atoms()) atoms.push_back(a.x);
  const double h = g.h_max(), excl = spec.exclusion_cells * h, excl_t = spec.exclusion_cells * g.dt();
  // a space-time atom enters as a one-slab pulse, so the slabs right after it
  // only resolve its spreading to O(dt)
  auto slab_ok = [&](int j) {
    const double t = g.slab_end(j);
    for (const auto& a : mu.atoms())
      if (t >= a.t && t - a.t < excl_t) return false;
    return true;
  };
  std::vector<std::size_t> cells;
  for (std::size_t s = 0; s < g.space_cells(); ++s) {
    const Point x = g.center(s);
    if (g.domain().distance_to_boundary(x) < excl) continue;
    bool near = false;
    for (const auto& a : atoms) near = near || distance(a, x, g.dim()) < excl;
    if (!near) cells.push_back(s);
  }
  int stride = std::max(1, spec.stride), tstride = std::max(1, spec.time_stride);
  for (;;) {
    std::vector<ProbeCell> out;
    for (int j = tstride - 1; j < g.time_steps(); j += tstride) {
      if (!slab_ok(j)) continue;
      for (std::size_t s : cells) {
        const CellIndex c = g.multi(s);
        bool keep = true;
        for (int i = 0; i < g.dim(); ++i) keep = keep && c[i] % stride == 0;
        if (keep) out.push_back({j, s});
      }
    }
    if (static_cast<int>(out.size()) >= spec.min_probes || (stride == 1 && tstride == 1)) {
      if (spec.max_probes > 0 && out.size() > spec.max_probes) {
        std::mt19937_64 rng(spec.seed);
        std::shuffle(out.begin(), out.end(), rng);
        out.resize(std::max<std::size_t>(spec.max_probes, spec.min_probes));
        std::sort(out.begin(), out.end(), [](const ProbeCell& a, const ProbeCell& b) {
          return a.slab != b.slab ? a.slab < b.slab : a.cell < b.cell;
        });
      }
      return out;
    }
    stride = std::max(1, stride / 2);
    tstride = std::max(1, tstride / 2);
  }
}

namespace detail {

inline EstimateReport make_report(const std::string& id, double lhs, double rhs, const Ceilings& c, const Grid& g) {
  EstimateReport r;
  r.id = id;
  r.lhs = lhs;
  r.rhs = rhs;
  if (lhs == 0.0)
    r.constant = 0.0;
  else
    r.constant = rhs > 0.0 ? lhs / rhs : std::numeric_limits<double>::infinity();
  r.ceiling = c.at(id);
  r.pass = r.constant <= r.ceiling;
  r.h = g.h_max();
  r.dt = g.dt();
  return r;
}

}  // namespace detail

/// Data potential I_2^R[|sigma| (x) delta_0 + |mu|] at (x, t).
inline PotentialValue data_potential(const RadonMeasure& mu, const RadonMeasure& sigma, const Point& x, double t,
                                     double R, const QuadratureOptions& q = {}) {
  RadonMeasure data = abs_measure(mu);
  if (!sigma.empty()) data = data + RadonMeasure::initial_trace(abs_measure(sigma));
  return riesz_parabolic(data, x, t, R, q);
}

/// Left sides from the field, right sides from the bound formulas, constants against the ceilings.
inline std::vector<EstimateReport> verify_estimates(const SolveResult& r, const EstimateInput& in, const Ceilings& c,
                                                    std::vector<ProbeSample>* samples = nullptr) {
  if (r.failed) throw PreconditionError("cannot verify a failed run");
  const Grid& g = r.grid();
  const int N = g.dim();
  const double M = r.data_mass();
  std::vector<EstimateReport> out;

  out.push_back(detail::make_report("mass_linf_l1", r.sup_mass(), M, c, g));
  out.push_back(detail::make_report("absorption_l1", in.equation == Equation::pme ? r.absorption_integral : r.power_integral,
                                    M, c, g));

  const ExponentPack e = in.equation == Equation::pme ? exponents(N, in.m, 0.0, in.q, g.domain())
                                                      : exponents(N, 2.0, in.p, in.q, g.domain());
  if (in.equation == Equation::pme) {
    out.push_back(detail::make_report("weak_lr_u", marcinkiewicz_norm(r.u, e.r_u), std::pow(M, e.mass_power), c, g));
    out.push_back(detail::make_report("weak_lr_grad", marcinkiewicz_norm(composite_gradient(r.u, in.m), e.r_g),
                                      std::pow(M, e.grad_power), c, g));
  }

  // pointwise bounds on the probe lattice
  const auto probes = probe_lattice(g, in.mu, in.sigma, in.probes);
  const double R = in.equation == Equation::pme ? 2.0 * e.d : 2.0 * *e.D;
  const bool decay = in.equation == Equation::pme && r.mu_mass == 0.0;
  // probe ratios |u|/bound and |u|/decay bound, evaluated in parallel chunks
  if (samples) samples->assign(probes.size(), {});
  auto ratios = [&](std::size_t lo, std::size_t hi) {
    std::pair<double, double> w{0.0, 0.0};
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& pc = probes[i];
      const Point x = g.center(pc.cell);
      const double t = g.slab_end(pc.slab);
      const double u = std::abs(r.u.at(pc.slab, pc.cell));
      const PotentialValue pot = data_potential(in.mu, in.sigma, x, t, R, in.probes.quad);
      double bound;
      if (pot.infinite)
        bound = std::numeric_limits<double>::infinity();
      else if (in.equation == Equation::pme)
        bound = pointwise_bound_pme(e, M, pot.value, branch_of(in.m));
      else
        bound = pointwise_bound_plap(e, M, pot.value);
      const double db = decay ? decay_bound(t, r.sigma_mass, e) : 0.0;
      w.first = std::max(w.first, u / bound);
      if (decay) w.second = std::max(w.second, u / db);
      if (samples) (*samples)[i] = {x, t, r.u.at(pc.slab, pc.cell), pot, bound, db};
    }
    return w;
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16);
  const std::size_t chunk = (probes.size() + workers - 1) / workers;
  std::vector<std::future<std::pair<double, double>>> jobs;
  for (std::size_t lo = 0; lo < probes.size(); lo += chunk)
    jobs.push_back(std::async(std::launch::async, ratios, lo, std::min(probes.size(), lo + chunk)));
  double worst = 0.0, worst_decay = 0.0;
  for (auto& j : jobs) {
    const auto w = j.get();
    worst = std::max(worst, w.first);
    worst_decay = std::max(worst_decay, w.second);
  }
  const std::string pid = in.equation == Equation::plap ? "pointwise_plap"
                          : branch_of(in.m) == PMEBranch::slow ? "pointwise_pme_slow"
                                                               : "pointwise_pme_fast";
  EstimateReport pr = detail::make_report(pid, worst, 1.0, c, g);
  pr.probes = probes.size();
  out.push_back(pr);
  if (decay) {
    EstimateReport dr = detail::make_report("decay", worst_decay, 1.0, c, g);
    dr.probes = probes.size();
    out.push_back(dr);
  }
  return out;
}

}  // namespace dplab
