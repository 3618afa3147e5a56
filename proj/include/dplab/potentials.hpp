#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dplab/core.hpp"
#include "dplab/measure.hpp"

namespace dplab {

/// A potential value, or the flag that the point sits on an atom (or the
/// partial sums ran past the overflow threshold).
struct PotentialValue {
  double value = 0.0;
  bool infinite = false;
};

/// Radial quadrature controls. `min_radius` < 0 selects a quarter of the
/// measure's density cell width (0 when the measure has no density).
struct QuadratureOptions {
  int nodes = 256;
  double min_radius = -1.0;
  BallRule rule = BallRule::cell_center;
};

struct SpaceTimePoint {
  Point x{};
  double t = 0.0;
};

/// Batch request for I_2^R, bold-I_2^R or P_p^rho.
struct PotentialQuery {
  std::vector<SpaceTimePoint> points;
  double R = 1.0;
  double p = 3.0;
  QuadratureOptions quad;
};

namespace detail {

inline double auto_floor(const RadonMeasure& mu, double requested) {
  if (requested >= 0.0) return requested;
  double h = 0.0;
  auto visit = [&h](const RadonMeasure& m) {
    if (m.density()) h = std::max(h, m.density()->grid.h_max());
  };
  visit(mu);
  for (const auto& p : mu.products()) visit(*p.omega);
  if (mu.initial()) visit(*mu.initial());
  return 0.25 * h;
}

inline bool atom_at(const RadonMeasure& mu, const Point& x, double t) {
  auto hit = [&](const RadonMeasure& m, bool timed, double tt) {
    for (const auto& a : m.atoms())
      if (a.mass != 0.0 && distance(a.x, x, m.dim()) == 0.0 && (!timed || a.t == tt)) return true;
    return false;
  };
  if (mu.is_space()) return hit(mu, false, 0.0);
  if (hit(mu, true, t)) return true;
  if (mu.initial() && t == 0.0 && hit(*mu.initial(), false, 0.0)) return true;
  return false;
}

/// Integral over (lo, R) of F(rho) rho^{-k-1} d rho by the trapezoid rule in
/// log rho. F(rho) = mass with radius < rho, given sorted radii and prefix sums.
/// The first node takes the right limit of F.
inline double log_trapezoid(const std::vector<double>& radii, const std::vector<double>& prefix, double lo, double R,
                            double k, int nodes) {
  auto mass_below = [&](double rho, bool inclusive) {
    const auto it = inclusive ? std::upper_bound(radii.begin(), radii.end(), rho)
                              : std::lower_bound(radii.begin(), radii.end(), rho);
    const auto n = static_cast<std::size_t>(it - radii.begin());
    return n == 0 ? 0.0 : prefix[n - 1];
  };
  const double a = std::log(lo), b = std::log(R);
  const double step = (b - a) / (nodes - 1);
  double sum = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double s = (i == nodes - 1) ? b : a + i * step;
    const double rho = std::exp(s);
    const double f = mass_below(rho, i == 0) * std::exp(-k * s);
    sum += (i == 0 || i == nodes - 1) ? 0.5 * f : f;
  }
  return sum * step;
}

template <class RadiusOf>
PotentialValue radial_potential(const std::vector<SupportElement>& elems, RadiusOf radius_of, double R, double k,
                                double floor, int nodes) {
  std::vector<std::pair<double, double>> rm;
  rm.reserve(elems.size());
  for (const auto& e : elems)
    if (e.mass > 0.0) rm.emplace_back(radius_of(e), e.mass);
  if (rm.empty()) return {};
  std::sort(rm.begin(), rm.end());
  std::vector<double> radii(rm.size()), prefix(rm.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rm.size(); ++i) {
    radii[i] = rm[i].first;
    acc += rm[i].second;
    prefix[i] = acc;
  }
  const double lo = std::max(radii.front(), floor);
  if (lo <= 0.0) return {0.0, true};
  if (lo >= R) return {};
  return {log_trapezoid(radii, prefix, lo, R, k, nodes), false};
}

/// Quadrature with masses from the direct (possibly fractional) cylinder or ball evaluation.
template <class MassAt>
double direct_log_trapezoid(MassAt mass_at, double lo, double R, double k, int nodes) {
  const double a = std::log(lo), b = std::log(R);
  const double step = (b - a) / (nodes - 1);
  double sum = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double s = (i == nodes - 1) ? b : a + i * step;
    const double rho = std::exp(s) * (i == 0 ? 1.0 + 1e-12 : 1.0);
    const double f = mass_at(rho) * std::exp(-k * s);
    sum += (i == 0 || i == nodes - 1) ? 0.5 * f : f;
  }
  return sum * step;
}

inline void check_quad(double R, const QuadratureOptions& q) {
  if (!(R > 0.0)) throw DomainError("truncation radius R must be positive");
  if (q.nodes < 16) throw ConfigError("quadrature needs at least 16 nodes");
}

}  // namespace detail

/// R-truncated parabolic Riesz potential
///   I_2^R[|mu|](x, t) = int_0^R |mu|(B_rho(x) x (t - rho^2, t + rho^2)) rho^{-N} d rho / rho.
inline PotentialValue riesz_parabolic(const RadonMeasure& mu, const Point& x, double t, double R,
                                      const QuadratureOptions& q = {}) {
  detail::check_quad(R, q);
  if (mu.is_space()) throw PreconditionError("riesz_parabolic needs a space-time measure");
  const double k = mu.dim();
  const double floor = detail::auto_floor(mu, q.min_radius);
  if (detail::atom_at(mu, x, t)) return {0.0, true};
  if (q.rule == BallRule::cell_center) {
    const auto elems = support_elements(mu, x, t);
    return detail::radial_potential(
        elems, [](const SupportElement& e) { return std::max(e.dist, std::sqrt(e.lag)); }, R, k, floor, q.nodes);
  }
  double atom_floor = std::numeric_limits<double>::infinity();
  for (const auto& e : support_elements(mu, x, t)) atom_floor = std::min(atom_floor, std::max(e.dist, std::sqrt(e.lag)));
  const double lo = std::max(floor, mu.density() ? 0.0 : atom_floor);
  if (!(lo > 0.0)) return {0.0, true};
  if (lo >= R) return {};
  return {detail::direct_log_trapezoid([&](double rho) { return measure_of_cylinder(mu, x, t, rho, 1.0, 2.0, q.rule); },
                                       lo, R, k, q.nodes),
          false};
}

/// R-truncated elliptic Riesz potential bold-I_2^R[nu](x) = int_0^R nu(B_rho(x)) rho^{2-N} d rho / rho.
inline PotentialValue riesz_elliptic(const RadonMeasure& nu, const Point& x, double R, const QuadratureOptions& q = {}) {
  detail::check_quad(R, q);
  if (!nu.is_space()) throw PreconditionError("riesz_elliptic needs a space measure");
  const double k = nu.dim() - 2.0;
  const double floor = detail::auto_floor(nu, q.min_radius);
  // For N = 1 the integrand stays bounded at an atom.
  if (nu.dim() >= 2 && detail::atom_at(nu, x, 0.0)) return {0.0, true};
  const auto elems = support_elements(nu, x);
  if (q.rule == BallRule::cell_center)
    return detail::radial_potential(elems, [](const SupportElement& e) { return e.dist; }, R, k, floor, q.nodes);
  double atom_floor = std::numeric_limits<double>::infinity();
  for (const auto& e : elems) atom_floor = std::min(atom_floor, e.dist);
  const double lo = std::max(floor, nu.density() ? 0.0 : atom_floor);
  if (!(lo > 0.0)) return {0.0, nu.dim() >= 2};
  if (lo >= R) return {};
  return {detail::direct_log_trapezoid([&](double rho) { return measure_of_ball(nu, x, rho, q.rule); }, lo, R, k, q.nodes),
          false};
}

// ---------------------------------------------------------------------------
// p-Laplace potential

/// Dyadic radii rho_i = 2^{-i} rho for i = 0..i_max and the log-spaced tau
/// candidates for the infimum in D_p.
struct DyadicSchedule {
  double base_radius = 1.0;
  int i_max = 0;
  std::vector<double> tau_grid;
  double cell_width = 0.0;
  double overflow = 1e8;

  static std::vector<double> log_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2) throw ConfigError("tau grid needs 0 < tau_min < tau_max and >= 2 nodes");
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1));
    return g;
  }

  /// Levels down to the last radius not below `cell_width`.
  static DyadicSchedule resolved(double rho, double cell_width, double tau_min = 1e-6, double tau_max = 1e8,
                                 int tau_nodes = 64) {
    if (!(rho > 0.0) || !(cell_width > 0.0)) throw DomainError("dyadic schedule needs positive radius and cell width");
    DyadicSchedule s;
    s.base_radius = rho;
    s.cell_width = cell_width;
    s.i_max = std::max(0, static_cast<int>(std::floor(std::log2(rho / cell_width))));
    s.tau_grid = log_grid(tau_min, tau_max, tau_nodes);
    return s;
  }

  static DyadicSchedule levels(double rho, int i_max, double tau_min = 1e-6, double tau_max = 1e8, int tau_nodes = 64) {
    DyadicSchedule s;
    s.base_radius = rho;
    s.i_max = i_max;
    s.tau_grid = log_grid(tau_min, tau_max, tau_nodes);
    return s;
  }

  double radius(int i) const { return std::ldexp(base_radius, -i); }
};

struct DpTermValue {
  double value = 0.0;        ///< min over the tau grid
  double lower_bound = 0.0;  ///< certified lower bound on the true infimum
  double modulus = 0.0;      ///< value - lower_bound
  double tau_argmin = 0.0;
};

namespace detail {

/// Sorted keys |dt| / rho^p of the elements spatially inside B_rho, with prefix masses.
struct TauProfile {
  std::vector<double> keys, prefix;

  TauProfile(const std::vector<SupportElement>& elems, double rho, double p) {
    std::vector<std::pair<double, double>> km;
    const double rp = std::pow(rho, p);
    for (const auto& e : elems)
      if (e.mass > 0.0 && e.dist < rho) km.emplace_back(e.lag / rp, e.mass);
    std::sort(km.begin(), km.end());
    double acc = 0.0;
    for (const auto& [k, m] : km) {
      keys.push_back(k);
      acc += m;
      prefix.push_back(acc);
    }
  }

  /// Mass of the open cylinder with time half-width tau rho^p.
  double mass(double tau) const {
    const auto n = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), tau) - keys.begin());
    return n == 0 ? 0.0 : prefix[n - 1];
  }
};

template <class MassOfTau>
DpTermValue dp_minimize(MassOfTau mass_of_tau, double rho, double p, int N, const std::vector<double>& taus) {
  if (taus.empty()) throw ConfigError("empty tau grid");
  const double c = 1.0 / (2.0 * std::pow(p - 1.0, p - 1.0) * std::pow(rho, N));
  auto decreasing = [p](double tau) { return (p - 2.0) * std::pow(tau, -1.0 / (p - 2.0)); };
  std::vector<double> b(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) b[i] = c * mass_of_tau(taus[i]);
  DpTermValue r;
  r.value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double f = decreasing(taus[i]) + b[i];
    if (f < r.value) {
      r.value = f;
      r.tau_argmin = taus[i];
    }
  }
  // On [tau_i, tau_{i+1}] the infimum is at least a(tau_{i+1}) + b(tau_i);
  // beyond the grid it is at least b(tau_max), below it at least a(tau_min).
  double lb = std::min(c * mass_of_tau(taus.back()), decreasing(taus.front()));
  for (std::size_t i = 0; i + 1 < taus.size(); ++i) lb = std::min(lb, decreasing(taus[i + 1]) + b[i]);
  r.lower_bound = std::min(lb, r.value);
  r.modulus = r.value - r.lower_bound;
  return r;
}

inline void check_p(double p, double rho) {
  if (!(p > 2.0)) throw DomainError("D_p and P_p need p > 2");
  if (!(rho > 0.0)) throw DomainError("radius must be positive");
}

}  // namespace detail

/// D_p(rho)(x, t) = inf_tau { (p-2) tau^{-1/(p-2)} + |mu|(Q_{rho, tau rho^p}(x,t)) / (2 (p-1)^{p-1} rho^N) },
/// with the infimum taken over schedule.tau_grid.
inline DpTermValue dp_term(const RadonMeasure& mu, const Point& x, double t, double rho, double p,
                           const DyadicSchedule& schedule, BallRule rule = BallRule::cell_center) {
  detail::check_p(p, rho);
  if (mu.is_space()) throw PreconditionError("dp_term needs a space-time measure");
  if (rule == BallRule::cell_center) {
    const detail::TauProfile prof(support_elements(mu, x, t), rho, p);
    return detail::dp_minimize([&](double tau) { return prof.mass(tau); }, rho, p, mu.dim(), schedule.tau_grid);
  }
  return detail::dp_minimize([&](double tau) { return measure_of_cylinder(mu, x, t, rho, tau, p, rule); }, rho, p,
                             mu.dim(), schedule.tau_grid);
}

struct PPotentialValue {
  double value = 0.0;
  bool infinite = false;
  int levels = 0;                   ///< number of dyadic terms summed
  bool resolution_warning = false;  ///< smallest radius below the cell width
  double modulus = 0.0;             ///< summed tau-grid moduli
};

/// P_p^rho[mu](x, t) = sum_{i=0}^{i_max} D_p(2^{-i} rho)(x, t).
inline PPotentialValue p_potential(const RadonMeasure& mu, const Point& x, double t, double p,
                                   const DyadicSchedule& schedule) {
  detail::check_p(p, schedule.base_radius);
  if (mu.is_space()) throw PreconditionError("p_potential needs a space-time measure");
  if (schedule.i_max < 0) throw ConfigError("i_max must be nonnegative");
  const auto elems = support_elements(mu, x, t);
  PPotentialValue r;
  r.resolution_warning = schedule.cell_width > 0.0 && schedule.radius(schedule.i_max) < schedule.cell_width;
  for (int i = 0; i <= schedule.i_max; ++i) {
    const double rho = schedule.radius(i);
    const detail::TauProfile prof(elems, rho, p);
    const auto d = detail::dp_minimize([&](double tau) { return prof.mass(tau); }, rho, p, mu.dim(), schedule.tau_grid);
    r.value += d.value;
    r.modulus += d.modulus;
    r.levels = i + 1;
    if (r.value > schedule.overflow) {
      r.infinite = true;
      break;
    }
  }
  return r;
}

}  // namespace dplab
