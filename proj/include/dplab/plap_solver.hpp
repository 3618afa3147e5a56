#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/SparseLU>

#include "dplab/pme_solver.hpp"

namespace dplab {

struct PLapConfig {
  double p = 3.0;
  double q = 0.0;  ///< 0 disables absorption
  double k = std::numeric_limits<double>::infinity();
  double eps = 0.0;  ///< gradient regularisation; 0 selects 1e-6 times the data gradient scale
  double newton_tol = 1e-10;
  int newton_max_iter = 60;
  double mollification_scale = 0.0;
  BoxDomain domain = BoxDomain::cube(2, 0.0, 1.0, 1.0);
  GridSpec grid = GridSpec::uniform(2, 32, 32);

  Grid make_grid() const { return Grid(domain, grid); }

  void validate() const {
    if (!(p > 2.0)) throw HypothesisError("p must exceed 2");
    if (q < 0.0) throw ConfigError("q must be positive, or 0 to disable absorption");
    if (q > 0.0 && !(q > p - 1.0)) throw HypothesisError("absorption exponent q must exceed p - 1");
    if (!(k > 0.0)) throw ConfigError("truncation level k must be positive");
    if (eps < 0.0) throw ConfigError("eps must be positive, or 0 for the default");
    if (!(newton_tol > 0.0)) throw ConfigError("newton_tol must be positive");
    if (newton_max_iter < 1) throw ConfigError("newton_max_iter must be positive");
    const Grid g = make_grid();
    if (g.dt() > g.h_min() * (1.0 + 1e-12)) throw ConfigError("time step must not exceed the cell width");
  }
};

namespace detail {

using Stencil = std::vector<std::pair<long, double>>;

/// A face of the finite-volume mesh: normal difference D and tangential
/// differences T_l as linear combinations of cell values. `lo`/`hi` are the
/// cells on either side (-1 at a wall).
struct Face {
  long lo = -1, hi = -1;
  double h = 1.0;
  Stencil D;
  std::vector<Stencil> T;
};

inline std::vector<Face> build_faces(const Grid& g, const Neighbours& n) {
  const int N = g.dim();
  const std::size_t S = g.space_cells();
  std::vector<Face> faces;
  // value of the neighbour of c along axis l, side sd; the wall ghost is -u_c
  auto nb_term = [&](long c, int l, int sd, double w, Stencil& st) {
    const long o = n.nb[c][2 * l + sd];
    if (o >= 0)
      st.emplace_back(o, w);
    else
      st.emplace_back(c, -w);
  };
  for (int k = 0; k < N; ++k) {
    const double hk = g.h(k);
    for (std::size_t s = 0; s < S; ++s) {
      const long c = static_cast<long>(s);
      const long up = n.nb[s][2 * k + 1];
      if (n.nb[s][2 * k] < 0) {  // lower wall face
        Face f;
        f.hi = c;
        f.h = hk;
        f.D = {{c, 2.0 / hk}};
        faces.push_back(std::move(f));
      }
      Face f;
      f.lo = c;
      f.h = hk;
      if (up < 0) {  // upper wall face
        f.D = {{c, -2.0 / hk}};
      } else {
        f.hi = up;
        f.D = {{up, 1.0 / hk}, {c, -1.0 / hk}};
        for (int l = 0; l < N; ++l) {
          if (l == k) continue;
          Stencil t;
          const double w = 1.0 / (4.0 * g.h(l));
          nb_term(c, l, 1, w, t);
          nb_term(c, l, 0, -w, t);
          nb_term(up, l, 1, w, t);
          nb_term(up, l, 0, -w, t);
          f.T.push_back(std::move(t));
        }
      }
      faces.push_back(std::move(f));
    }
  }
  return faces;
}

inline double apply(const Stencil& st, const Eigen::VectorXd& u) {
  double v = 0.0;
  for (const auto& [c, w] : st) v += w * u[c];
  return v;
}

class PLapStepper {
 public:
  PLapStepper(const PLapConfig& c, const Grid& g)
      : c_(c), grid_(g), faces_(build_faces(g, Neighbours(g))), dt_(g.dt()), g_{c.q, c.k}, eps_(c.eps) {}

  double eps() const { return eps_; }

  void prepare(const GridField& u0, const GridField& source) {
    if (eps_ > 0.0) return;
    double amp = 0.0;
    for (double v : u0.values) amp = std::max(amp, std::abs(v));
    double fmax = 0.0;
    for (double v : source.values) fmax = std::max(fmax, std::abs(v));
    amp += fmax * grid_.domain().T();
    const double scale = amp / grid_.domain().diameter();
    eps_ = 1e-6 * (scale > 0.0 ? scale : 1.0);
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& u, const Eigen::VectorXd& u_old, const Eigen::VectorXd& f,
                           std::vector<Eigen::Triplet<double>>* jac) const {
    Eigen::VectorXd R = (u - u_old) / dt_ - f;
    const double e = c_.p - 2.0;
    for (const auto& fc : faces_) {
      const double D = apply(fc.D, u);
      double G = D * D + eps_ * eps_;
      std::vector<double> T(fc.T.size());
      for (std::size_t l = 0; l < fc.T.size(); ++l) {
        T[l] = apply(fc.T[l], u);
        G += T[l] * T[l];
      }
      const double A = std::pow(G, 0.5 * e);
      const double F = A * D;
      // contribution -F/h to the lower cell, +F/h to the upper cell
      if (fc.lo >= 0) R[fc.lo] -= F / fc.h;
      if (fc.hi >= 0) R[fc.hi] += F / fc.h;
      if (!jac) continue;
      const double B = e * std::pow(G, 0.5 * e - 1.0) * D;
      auto add = [&](long col, double dF) {
        if (fc.lo >= 0) jac->emplace_back(fc.lo, col, -dF / fc.h);
        if (fc.hi >= 0) jac->emplace_back(fc.hi, col, dF / fc.h);
      };
      for (const auto& [col, w] : fc.D) add(col, A * w + B * D * w);
      for (std::size_t l = 0; l < fc.T.size(); ++l)
        for (const auto& [col, w] : fc.T[l]) add(col, B * T[l] * w);
    }
    for (long i = 0; i < u.size(); ++i) {
      R[i] += g_.value(u[i]);
      if (jac) jac->emplace_back(i, i, 1.0 / dt_ + g_.derivative(u[i]));
    }
    return R;
  }

  int step(Eigen::VectorXd& u, const Eigen::VectorXd& u_old, const Eigen::VectorXd& f, double& res) {
    const long n = u.size();
    std::vector<Eigen::Triplet<double>> tr;
    Eigen::VectorXd R = residual(u, u_old, f, nullptr);
    res = dt_ * R.cwiseAbs().maxCoeff();
    for (int it = 0; it < c_.newton_max_iter; ++it) {
      if (res <= c_.newton_tol) return it;
      tr.clear();
      residual(u, u_old, f, &tr);
      Eigen::SparseMatrix<double> J(n, n);
      J.setFromTriplets(tr.begin(), tr.end());
      if (!analyzed_) {
        lu_.analyzePattern(J);
        analyzed_ = true;
      }
      lu_.factorize(J);
      if (lu_.info() != Eigen::Success) return -1;
      const Eigen::VectorXd d = lu_.solve(-R);
      const double r0 = R.norm();
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        const Eigen::VectorXd trial = u + t * d;
        const Eigen::VectorXd Rt = residual(trial, u_old, f, nullptr);
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
  const PLapConfig& c_;
  Grid grid_;
  std::vector<Face> faces_;
  double dt_;
  Absorption g_;
  double eps_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
  bool analyzed_ = false;
};

}  // namespace detail

/// Backward Euler for u_t - div(|grad u|^{p-2} grad u) + T_k(|u|^{q-1} u) = mu with
/// the face flux (|grad u|^2 + eps^2)^{(p-2)/2} du/dn and Dirichlet walls.
inline SolveResult solve_plap(const PLapConfig& config, const RadonMeasure& mu, const RadonMeasure& sigma) {
  config.validate();
  const Grid grid = config.make_grid();
  const double scale = detail::resolve_scale(config.mollification_scale, grid);
  detail::PLapStepper stepper(config, grid);
  return detail::run_scheme(stepper, grid, scale, config.newton_tol, Absorption{config.q, config.k}, mu, sigma);
}

inline ComparisonResult plap_comparison_run(const PLapConfig& config, const RadonMeasure& mu1, const RadonMeasure& mu2,
                                            const RadonMeasure& sigma1, const RadonMeasure& sigma2) {
  config.validate();
  const Grid grid = config.make_grid();
  const double scale = detail::resolve_scale(config.mollification_scale, grid);
  // one eps for both runs, taken from the larger data
  PLapConfig cfg = config;
  if (cfg.eps == 0.0) {
    detail::PLapStepper probe(config, grid);
    RadonMeasure t1, t2;
    GridField f1 = detail::discretize_source(mu1, scale, grid, t1), f2 = detail::discretize_source(mu2, scale, grid, t2);
    GridField s1 = detail::discretize_space(sigma1 + t1, scale, grid), s2 = detail::discretize_space(sigma2 + t2, scale, grid);
    for (std::size_t i = 0; i < f1.size(); ++i) f1.values[i] = std::max(std::abs(f1.values[i]), std::abs(f2.values[i]));
    for (std::size_t i = 0; i < s1.size(); ++i) s1.values[i] = std::max(std::abs(s1.values[i]), std::abs(s2.values[i]));
    probe.prepare(s1, f1);
    cfg.eps = probe.eps();
  }
  auto solve = [&](const RadonMeasure& mu, const RadonMeasure& s) { return solve_plap(cfg, mu, s); };
  return detail::compare_runs(solve, grid, config.newton_tol, scale, mu1, mu2, sigma1, sigma2);
}

}  // namespace dplab
