#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "dplab/geometry.hpp"
#include "dplab/measure.hpp"

namespace dplab {

/// Output of a time-stepping run. `u` holds u(t_{j+1}) in slab j; `u0` the
/// discretised initial datum. mass[0] is ||u0||_1, mass[j+1] = ||u(t_{j+1})||_1.
struct SolveResult {
  GridField u;
  GridField u0;
  GridField source;  ///< discretised mu, density per unit space-time volume
  std::vector<int> newton_iterations;
  std::vector<double> residuals;
  std::vector<double> mass;
  std::vector<double> max_abs;    ///< max_x |u(t_j)|, same indexing as mass
  double absorption_integral = 0.0;  ///< int int |T_k(|u|^{q-1} u)|
  double power_integral = 0.0;       ///< int int |u|^q (0 when absorption is off)
  double sigma_mass = 0.0;           ///< |sigma|(Omega) of the given datum
  double mu_mass = 0.0;              ///< |mu|(Omega_T) of the given datum
  double mollification_scale = 0.0;
  double newton_tol = 0.0;
  bool failed = false;
  int failed_step = -1;
  std::string message;

  double data_mass() const { return sigma_mass + mu_mass; }
  const Grid& grid() const { return u.grid; }
  /// Sup over the recorded times of ||u(t)||_1.
  double sup_mass() const {
    double m = 0.0;
    for (double v : mass) m = std::max(m, v);
    return m;
  }
};

/// Absorption T_k(|s|^{q-1} s); q == 0 disables it.
struct Absorption {
  double q = 0.0;
  double k = std::numeric_limits<double>::infinity();

  bool enabled() const { return q > 0.0; }
  double value(double s) const {
    if (!enabled()) return 0.0;
    const double v = std::pow(std::abs(s), q);
    return std::copysign(std::min(v, k), s);
  }
  double derivative(double s) const {
    if (!enabled() || s == 0.0) return 0.0;
    const double a = std::abs(s);
    if (std::pow(a, q) >= k) return 0.0;
    return q * std::pow(a, q - 1.0);
  }
};

namespace detail {

/// Cell-centred neighbours along each axis; -1 marks the Dirichlet wall.
struct Neighbours {
  int dim = 1;
  std::vector<std::array<long, 6>> nb;  // axis i: [2i] lower, [2i+1] upper

  explicit Neighbours(const Grid& g) : dim(g.dim()) {
    const std::size_t S = g.space_cells();
    nb.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      const CellIndex c = g.multi(s);
      nb[s].fill(-1);
      for (int i = 0; i < dim; ++i) {
        CellIndex lo = c, hi = c;
        lo[i] -= 1;
        hi[i] += 1;
        if (g.in_range(lo)) nb[s][2 * i] = static_cast<long>(g.linear(lo));
        if (g.in_range(hi)) nb[s][2 * i + 1] = static_cast<long>(g.linear(hi));
      }
    }
  }
};

/// Dirichlet Laplacian (positive definite, 1/h^2 per interior face, 2/h^2 per wall face).
inline Eigen::SparseMatrix<double> dirichlet_laplacian(const Grid& g, const Neighbours& n) {
  const std::size_t S = g.space_cells();
  std::vector<Eigen::Triplet<double>> tr;
  for (std::size_t s = 0; s < S; ++s) {
    double diag = 0.0;
    for (int i = 0; i < g.dim(); ++i) {
      const double c = 1.0 / (g.h(i) * g.h(i));
      for (int side = 0; side < 2; ++side) {
        const long o = n.nb[s][2 * i + side];
        if (o < 0) {
          diag += 2.0 * c;
        } else {
          diag += c;
          tr.emplace_back(s, o, -c);
        }
      }
    }
    tr.emplace_back(s, s, diag);
  }
  Eigen::SparseMatrix<double> L(static_cast<long>(S), static_cast<long>(S));
  L.setFromTriplets(tr.begin(), tr.end());
  return L;
}

/// Space measure on grid cells: atoms as bumps of half-width `scale`, a
/// density on the solver grid copied cell by cell, other densities as bumps.
inline GridField discretize_space(const RadonMeasure& nu, double scale, const Grid& g) {
  if (!nu.is_space()) throw PreconditionError("initial datum must be a space measure");
  if (nu.dim() != g.dim()) throw PreconditionError("initial datum dimension differs from the grid");
  GridField out = GridField::space(g);
  for (const auto& a : nu.atoms()) deposit_bump(out, 0, a.x, a.mass, scale);
  if (nu.density()) {
    const GridField& f = *nu.density();
    if (f.grid == g) {
      for (std::size_t s = 0; s < f.size(); ++s) out.values[s] += f.values[s];
    } else {
      const double vol = f.grid.cell_volume();
      for (std::size_t s = 0; s < f.size(); ++s)
        if (f.values[s] != 0.0) deposit_bump(out, 0, f.grid.center(s), f.values[s] * vol, scale);
    }
  }
  return out;
}

/// Space-time measure: slab masses divided by dt; a density on the solver grid is copied.
/// Its initial-trace part is returned separately, to be added to sigma.
inline GridField discretize_source(const RadonMeasure& mu, double scale, const Grid& g, RadonMeasure& trace) {
  if (mu.is_space()) throw PreconditionError("source must be a space-time measure");
  if (mu.dim() != g.dim()) throw PreconditionError("source dimension differs from the grid");
  RadonMeasure body = RadonMeasure::spacetime(mu.dim());
  for (const auto& a : mu.atoms()) body.add_atom(a.x, a.t, a.mass);
  for (const auto& p : mu.products()) body.add_product(*p.omega, p.F, p.horizon);
  GridField out = mollify(body, scale, g);
  if (mu.density()) {
    const GridField& f = *mu.density();
    if (f.grid == g) {
      for (std::size_t i = 0; i < f.size(); ++i) out.values[i] += f.values[i];
    } else {
      RadonMeasure d = RadonMeasure::spacetime(mu.dim());
      d.set_density(f);
      const GridField m = mollify(d, scale, g);
      for (std::size_t i = 0; i < m.size(); ++i) out.values[i] += m.values[i];
    }
  }
  trace = mu.initial() ? *mu.initial() : RadonMeasure::space(mu.dim());
  return out;
}

inline double resolve_scale(double requested, const Grid& g) {
  const double min_scale = 2.0 * g.h_max();
  if (requested <= 0.0) return min_scale;
  if (requested < min_scale * (1.0 - 1e-12)) throw ResolutionError("mollification scale below two cell widths");
  return requested;
}

inline double l1(const Eigen::VectorXd& u, double vol) { return u.cwiseAbs().sum() * vol; }

/// Common per-step bookkeeping after a converged step j.
inline void record_step(SolveResult& r, int j, const Eigen::VectorXd& u, const Absorption& g) {
  const Grid& grid = r.u.grid;
  const double vol = grid.cell_volume(), dt = grid.dt();
  const std::size_t S = grid.space_cells();
  for (std::size_t s = 0; s < S; ++s) r.u.at(j, s) = u[static_cast<long>(s)];
  r.mass.push_back(l1(u, vol));
  r.max_abs.push_back(u.size() ? u.cwiseAbs().maxCoeff() : 0.0);
  if (g.enabled())
    for (long s = 0; s < u.size(); ++s) {
      r.absorption_integral += std::abs(g.value(u[s])) * vol * dt;
      r.power_integral += std::pow(std::abs(u[s]), g.q) * vol * dt;
    }
}

}  // namespace detail

/// min over all cells of u1 - u2, with the tolerance it is judged against.
struct ComparisonResult {
  double min_gap = 0.0;
  double tol_comp = 0.0;
  GridField gap;  ///< u1 - u2 on every slab
  SolveResult first, second;

  bool ordered() const { return min_gap >= -tol_comp; }
};

namespace detail {

inline void check_ordered(const GridField& a, const GridField& b, const char* what) {
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a.values[i]), std::abs(b.values[i])});
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.values[i] < b.values[i] - 1e-13 * scale) throw PreconditionError(std::string(what) + " data are not ordered");
}

/// Runs both solves and forms the gap. Newton residuals of up to newton_tol per
/// step propagate through the contractive steps, hence the steps * tol term.
template <class Solve>
ComparisonResult compare_runs(Solve solve, const Grid& g, double newton_tol, double scale, const RadonMeasure& mu1,
                              const RadonMeasure& mu2, const RadonMeasure& s1, const RadonMeasure& s2) {
  RadonMeasure t1, t2;
  const GridField f1 = discretize_source(mu1, scale, g, t1), f2 = discretize_source(mu2, scale, g, t2);
  check_ordered(f1, f2, "source");
  const GridField i1 = discretize_space(s1, scale, g), i2 = discretize_space(s2, scale, g);
  GridField j1 = i1, j2 = i2;
  const GridField tr1 = discretize_space(t1, scale, g), tr2 = discretize_space(t2, scale, g);
  for (std::size_t k = 0; k < j1.size(); ++k) {
    j1.values[k] += tr1.values[k];
    j2.values[k] += tr2.values[k];
  }
  check_ordered(j1, j2, "initial");
  ComparisonResult c;
  c.first = solve(mu1, s1);
  c.second = solve(mu2, s2);
  if (c.first.failed || c.second.failed) throw SolverFailure("comparison run failed to converge");
  c.gap = GridField::spacetime(g);
  c.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < c.gap.size(); ++k) {
    c.gap.values[k] = c.first.u.values[k] - c.second.u.values[k];
    c.min_gap = std::min(c.min_gap, c.gap.values[k]);
  }
  c.tol_comp = 10.0 * newton_tol + g.time_steps() * newton_tol;
  return c;
}

}  // namespace detail

}  // namespace dplab
