#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/SparseCholesky>

#include "dplab/solver_common.hpp"

namespace dplab {

struct PMEConfig {
  double m = 2.0;
  double q = 0.0;  ///< 0 disables absorption
  double k = std::numeric_limits<double>::infinity();
  double n_reg = 1e4;
  double newton_tol = 1e-10;
  int newton_max_iter = 60;
  double mollification_scale = 0.0;  ///< 0 selects 2 h_max
  BoxDomain domain = BoxDomain::cube(2, 0.0, 1.0, 1.0);
  GridSpec grid = GridSpec::uniform(2, 32, 32);

  Grid make_grid() const { return Grid(domain, grid); }

  void validate() const {
    const int N = domain.dim();
    if (!(m > 0.0)) throw ConfigError("m must be positive");
    if (!(m > (N - 2.0) / N)) throw HypothesisError("m must exceed (N-2)/N");
    if (q < 0.0) throw ConfigError("q must be positive, or 0 to disable absorption");
    if (q > 0.0 && !(q > std::max(1.0, m))) throw HypothesisError("absorption exponent q must exceed max(1, m)");
    if (!(k > 0.0)) throw ConfigError("truncation level k must be positive");
    if (!(n_reg >= 1.0)) throw ConfigError("n_reg must be at least 1");
    if (!(newton_tol > 0.0)) throw ConfigError("newton_tol must be positive");
    if (newton_max_iter < 1) throw ConfigError("newton_max_iter must be positive");
    const Grid g = make_grid();
    if (g.dt() > g.h_min() * (1.0 + 1e-12)) throw ConfigError("time step must not exceed the cell width");
  }
};

/// Phi_n(s) = int_0^s a_n, the primitive of the clipped diffusivity.
inline double phi_n(double s, double m, double n) {
  const double a = std::abs(s), lo = 1.0 / n;
  double v;
  if (a <= lo) {
    v = m * std::pow(lo, m - 1.0) * a;
  } else if (a <= n) {
    v = std::pow(a, m) + (m - 1.0) * std::pow(lo, m);
  } else {
    v = std::pow(n, m) + (m - 1.0) * std::pow(lo, m) + m * std::pow(n, m - 1.0) * (a - n);
  }
  return std::copysign(v, s);
}

/// Inverse of phi_n.
inline double phi_n_inverse(double v, double m, double n) {
  const double a = std::abs(v), lo = 1.0 / n;
  const double v_lo = m * std::pow(lo, m), v_hi = std::pow(n, m) + (m - 1.0) * std::pow(lo, m);
  double s;
  if (a <= v_lo)
    s = a / (m * std::pow(lo, m - 1.0));
  else if (a <= v_hi)
    s = std::pow(a - (m - 1.0) * std::pow(lo, m), 1.0 / m);
  else
    s = n + (a - v_hi) / (m * std::pow(n, m - 1.0));
  return std::copysign(s, v);
}

namespace detail {

/// One backward Euler step: (u - u_old)/dt + L Phi_n(u) + g(u) = f, by damped Newton.
/// In the variable v = Phi_n(u) the Newton system diag((1/dt + g')/a_n) + L is symmetric positive definite.
class PMEStepper {
 public:
  PMEStepper(const PMEConfig& c, const Grid& g)
      : c_(c), L_(dirichlet_laplacian(g, Neighbours(g))), dt_(g.dt()), g_{c.q, c.k} {
    M_ = L_;
    solver_.analyzePattern(M_);
    diag_.resize(L_.rows());
    for (long i = 0; i < L_.rows(); ++i) diag_[i] = L_.coeff(i, i);
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& u, const Eigen::VectorXd& u_old, const Eigen::VectorXd& f) const {
    Eigen::VectorXd P(u.size());
    for (long i = 0; i < u.size(); ++i) P[i] = phi_n(u[i], c_.m, c_.n_reg);
    Eigen::VectorXd R = (u - u_old) / dt_ + L_ * P - f;
    if (g_.enabled())
      for (long i = 0; i < u.size(); ++i) R[i] += g_.value(u[i]);
    return R;
  }

  void prepare(const GridField&, const GridField&) {}

  /// Returns iterations used, or -1 on failure; `res` receives dt * max|R|.
  int step(Eigen::VectorXd& u, const Eigen::VectorXd& u_old, const Eigen::VectorXd& f, double& res) {
    Eigen::VectorXd R = residual(u, u_old, f);
    res = dt_ * R.cwiseAbs().maxCoeff();
    for (int it = 0; it < c_.newton_max_iter; ++it) {
      if (res <= c_.newton_tol) return it;
      Eigen::VectorXd a(u.size());
      for (long i = 0; i < u.size(); ++i) {
        a[i] = regularized_diffusivity(u[i], c_.m, c_.n_reg);
        if (!(a[i] > 0.0)) throw InvariantError("non-positive diffusivity");
      }
      for (long i = 0; i < u.size(); ++i) M_.coeffRef(i, i) = diag_[i] + (1.0 / dt_ + g_.derivative(u[i])) / a[i];
      solver_.factorize(M_);
      if (solver_.info() != Eigen::Success) return -1;
      const Eigen::VectorXd w = solver_.solve(-R);
      Eigen::VectorXd v(u.size());
      for (long i = 0; i < u.size(); ++i) v[i] = phi_n(u[i], c_.m, c_.n_reg);
      const double r0 = R.norm();
      double t = 1.0;
      bool moved = false;
      Eigen::VectorXd trial(u.size());
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        // the update is taken in the variable phi_n(u)
        for (long i = 0; i < u.size(); ++i) trial[i] = phi_n_inverse(v[i] + t * w[i], c_.m, c_.n_reg);
        const Eigen::VectorXd Rt = residual(trial, u_old, f);
        if (Rt.allFinite() && Rt.norm() <= (1.0 - 1e-4 * t) * r0) {
          u = trial;
          R = Rt;
          moved = true;
          break;
        }
      }
      if (!moved) return -1;
      res = dt_ * R.cwiseAbs().maxCoeff();
    }
    return res <= c_.newton_tol ? c_.newton_max_iter : -1;
  }

 private:
  const PMEConfig& c_;
  Eigen::SparseMatrix<double> L_, M_;
  Eigen::VectorXd diag_;
  double dt_;
  Absorption g_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

/// Shared driver: discretise data, then step with `Stepper`.
template <class Stepper>
SolveResult run_scheme(Stepper& stepper, const Grid& grid, double scale, double newton_tol, const Absorption& g,
                       const RadonMeasure& mu, const RadonMeasure& sigma) {
  mu.check_inside(grid.domain());
  sigma.check_inside(grid.domain());
  SolveResult r;
  r.mollification_scale = scale;
  r.newton_tol = newton_tol;
  r.sigma_mass = total_variation(sigma);
  r.mu_mass = total_variation(mu);
  RadonMeasure trace;
  r.source = discretize_source(mu, scale, grid, trace);
  r.u0 = discretize_space(sigma, scale, grid);
  if (!trace.empty()) {
    const GridField t = discretize_space(trace, scale, grid);
    for (std::size_t s = 0; s < t.size(); ++s) r.u0.values[s] += t.values[s];
  }
  stepper.prepare(r.u0, r.source);
  r.u = GridField::spacetime(grid);
  const std::size_t S = grid.space_cells();
  Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(r.u0.values.data(), static_cast<long>(S));
  r.mass.push_back(l1(u, grid.cell_volume()));
  r.max_abs.push_back(S ? u.cwiseAbs().maxCoeff() : 0.0);
  for (int j = 0; j < grid.time_steps(); ++j) {
    const Eigen::VectorXd u_old = u;
    const Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(r.source.values.data() + j * S, static_cast<long>(S));
    double res = 0.0;
    const int its = stepper.step(u, u_old, f, res);
    r.residuals.push_back(res);
    if (its < 0 || !u.allFinite()) {
      r.failed = true;
      r.failed_step = j;
      r.message = "Newton did not converge at step " + std::to_string(j);
      r.newton_iterations.push_back(its);
      break;
    }
    r.newton_iterations.push_back(its);
    record_step(r, j, u, g);
  }
  return r;
}

}  // namespace detail

/// Backward Euler finite volumes for u_t - Delta(|u|^{m-1} u) + T_k(|u|^{q-1} u) = mu,
/// u = 0 on the lateral boundary, u(0) = sigma (plus any initial trace carried by mu).
inline SolveResult solve_pme(const PMEConfig& config, const RadonMeasure& mu, const RadonMeasure& sigma) {
  config.validate();
  const Grid grid = config.make_grid();
  const double scale = detail::resolve_scale(config.mollification_scale, grid);
  detail::PMEStepper stepper(config, grid);
  return detail::run_scheme(stepper, grid, scale, config.newton_tol, Absorption{config.q, config.k}, mu, sigma);
}

/// Solves with (mu1, sigma1) and (mu2, sigma2); requires mu1 >= mu2 and sigma1 >= sigma2 after discretisation.
inline ComparisonResult comparison_run(const PMEConfig& config, const RadonMeasure& mu1, const RadonMeasure& mu2,
                                       const RadonMeasure& sigma1, const RadonMeasure& sigma2) {
  config.validate();
  const Grid grid = config.make_grid();
  const double scale = detail::resolve_scale(config.mollification_scale, grid);
  auto solve = [&](const RadonMeasure& mu, const RadonMeasure& s) { return solve_pme(config, mu, s); };
  return detail::compare_runs(solve, grid, config.newton_tol, scale, mu1, mu2, sigma1, sigma2);
}

struct RetentionCurve {
  std::vector<double> scales;
  std::vector<double> retention;  ///< int_Omega u(x, t_probe) dx per scale
  std::vector<bool> converged;
  double t_probe = 0.0;
};

/// L^1 mass at time t by linear interpolation of the recorded history.
inline double mass_at(const SolveResult& r, double t) {
  const double dt = r.grid().dt();
  const double s = t / dt;
  const int j = std::clamp(static_cast<int>(std::floor(s)), 0, static_cast<int>(r.mass.size()) - 2);
  const double w = std::clamp(s - j, 0.0, 1.0);
  return (1.0 - w) * r.mass[j] + w * r.mass[j + 1];
}

/// sigma = unit atom at `atom` mollified at each scale, mu = 0; returns int u(t_probe) per scale.
inline RetentionCurve mass_retention_experiment(const PMEConfig& config, const Point& atom,
                                                const std::vector<double>& scales, double t_probe) {
  config.validate();
  if (!(t_probe > 0.0) || !(t_probe < config.domain.T())) throw DomainError("t_probe must lie in (0, T)");
  if (scales.empty()) throw PreconditionError("need at least one mollification scale");
  for (std::size_t i = 1; i < scales.size(); ++i)
    if (!(scales[i] < scales[i - 1])) throw PreconditionError("mollification scales must decrease");
  RetentionCurve c;
  c.t_probe = t_probe;
  const int N = config.domain.dim();
  for (double s : scales) {
    PMEConfig cfg = config;
    cfg.mollification_scale = s;
    const SolveResult r = solve_pme(cfg, RadonMeasure::spacetime(N), RadonMeasure::unit_atom(N, atom));
    c.scales.push_back(s);
    c.converged.push_back(!r.failed);
    c.retention.push_back(r.failed ? std::numeric_limits<double>::quiet_NaN() : mass_at(r, t_probe));
  }
  return c;
}

}  // namespace dplab
