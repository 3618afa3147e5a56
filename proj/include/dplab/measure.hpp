#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "dplab/core.hpp"
#include "dplab/geometry.hpp"

namespace dplab {

enum class Ambient { space, spacetime };

/// Point mass. `t` is ignored for space measures.
struct Atom {
  Point x{};
  double t = 0.0;
  double mass = 0.0;
};

class RadonMeasure;

/// omega (x) F: a space measure times a time profile, piecewise constant on
/// F.size() equal sub-intervals of (0, horizon).
struct ProductPart {
  std::shared_ptr<const RadonMeasure> omega;
  std::vector<double> F;
  double horizon = 1.0;

  double step() const { return horizon / static_cast<double>(F.size()); }
};

/// Bounded signed measure on Omega or Omega_T, represented as
///   atoms + cell density + sum of omega (x) F products + sigma (x) delta_{t=0}.
/// The components are taken to be mutually singular, so the Jordan parts
/// split component by component.
class RadonMeasure {
 public:
  RadonMeasure() = default;
  RadonMeasure(int dim, Ambient ambient) : dim_(dim), ambient_(ambient) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("measure dimension must be 1, 2 or 3");
  }

  static RadonMeasure space(int dim) { return RadonMeasure(dim, Ambient::space); }
  static RadonMeasure spacetime(int dim) { return RadonMeasure(dim, Ambient::spacetime); }

  /// sigma (x) delta_{t=0} for a space measure sigma.
  static RadonMeasure initial_trace(const RadonMeasure& sigma) {
    if (sigma.ambient() != Ambient::space) throw PreconditionError("initial trace needs a space measure");
    RadonMeasure m = spacetime(sigma.dim());
    m.initial_ = std::make_shared<const RadonMeasure>(sigma);
    return m;
  }

  static RadonMeasure unit_atom(int dim, const Point& x, double t = 0.0, Ambient a = Ambient::space) {
    RadonMeasure m(dim, a);
    m.add_atom(x, t, 1.0);
    return m;
  }

  int dim() const { return dim_; }
  Ambient ambient() const { return ambient_; }
  bool is_space() const { return ambient_ == Ambient::space; }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::optional<GridField>& density() const { return density_; }
  const std::vector<ProductPart>& products() const { return products_; }
  const std::shared_ptr<const RadonMeasure>& initial() const { return initial_; }

  RadonMeasure& add_atom(const Point& x, double t, double mass) {
    if (!std::isfinite(mass)) throw DomainError("atom mass must be finite");
    atoms_.push_back({x, is_space() ? 0.0 : t, mass});
    return *this;
  }
  RadonMeasure& add_atom(const Point& x, double mass) { return add_atom(x, 0.0, mass); }

  RadonMeasure& set_density(GridField f) {
    if (f.grid.dim() != dim_) throw PreconditionError("density grid dimension mismatch");
    if (f.space_only != is_space()) throw PreconditionError("density ambient mismatch");
    if (!f.all_finite()) throw DomainError("density must be finite");
    density_ = std::move(f);
    return *this;
  }

  RadonMeasure& add_product(const RadonMeasure& omega, std::vector<double> F, double horizon) {
    if (is_space()) throw PreconditionError("product parts live on space-time measures");
    if (!omega.is_space() || omega.dim() != dim_) throw PreconditionError("product factor must be a space measure");
    if (F.empty() || !(horizon > 0.0)) throw DomainError("product time profile must be non-empty");
    products_.push_back({std::make_shared<const RadonMeasure>(omega), std::move(F), horizon});
    return *this;
  }

  RadonMeasure& set_initial(const RadonMeasure& sigma) {
    if (is_space()) throw PreconditionError("initial trace lives on space-time measures");
    if (!sigma.is_space() || sigma.dim() != dim_) throw PreconditionError("initial trace must be a space measure");
    initial_ = std::make_shared<const RadonMeasure>(sigma);
    return *this;
  }

  bool empty() const { return atoms_.empty() && !density_ && products_.empty() && !initial_; }

  /// Throws unless every atom lies in the closed domain.
  void check_inside(const BoxDomain& dom) const {
    for (const auto& a : atoms_) {
      if (!dom.contains(a.x)) throw DomainError("atom outside the domain");
      if (!is_space() && (a.t < 0.0 || a.t > dom.T())) throw DomainError("atom time outside [0, T]");
    }
    if (initial_) initial_->check_inside(dom);
    for (const auto& p : products_) p.omega->check_inside(dom);
  }

  RadonMeasure scaled(double c) const {
    RadonMeasure m = *this;
    for (auto& a : m.atoms_) a.mass *= c;
    if (m.density_)
      for (auto& v : m.density_->values) v *= c;
    for (auto& p : m.products_)
      for (auto& f : p.F) f *= c;
    if (m.initial_) m.initial_ = std::make_shared<const RadonMeasure>(m.initial_->scaled(c));
    return m;
  }

  /// Sum of two measures of the same kind; densities must share a grid.
  friend RadonMeasure operator+(const RadonMeasure& a, const RadonMeasure& b) {
    if (a.dim_ != b.dim_ || a.ambient_ != b.ambient_) throw PreconditionError("measure kind mismatch in sum");
    RadonMeasure m = a;
    m.atoms_.insert(m.atoms_.end(), b.atoms_.begin(), b.atoms_.end());
    if (b.density_) {
      if (!m.density_) {
        m.density_ = b.density_;
      } else {
        if (!(m.density_->grid == b.density_->grid)) throw PreconditionError("density grids differ");
        for (std::size_t i = 0; i < m.density_->size(); ++i) m.density_->values[i] += b.density_->values[i];
      }
    }
    m.products_.insert(m.products_.end(), b.products_.begin(), b.products_.end());
    if (b.initial_) {
      m.initial_ = m.initial_ ? std::make_shared<const RadonMeasure>(*m.initial_ + *b.initial_) : b.initial_;
    }
    return m;
  }

 private:
  int dim_ = 1;
  Ambient ambient_ = Ambient::space;
  std::vector<Atom> atoms_;
  std::optional<GridField> density_;
  std::vector<ProductPart> products_;
  std::shared_ptr<const RadonMeasure> initial_;
};

// ---------------------------------------------------------------------------
// Elementary functions

/// T_k(s) = max(min(s, k), -k).
inline double truncate(double s, double k) {
  if (!(k > 0.0)) throw DomainError("truncation level must be positive");
  return std::max(std::min(s, k), -k);
}

/// a_n(s) = m |s|^{m-1} with |s| clipped to [1/n, n].
inline double regularized_diffusivity(double s, double m, double n) {
  if (!(m > 0.0) || !(n >= 1.0)) throw DomainError("regularized_diffusivity needs m > 0 and n >= 1");
  const double a = std::clamp(std::abs(s), 1.0 / n, n);
  return m * std::pow(a, m - 1.0);
}

// ---------------------------------------------------------------------------
// Total variation and Jordan decomposition

namespace detail {
inline double abs_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}
}  // namespace detail

inline double total_variation(const RadonMeasure& mu) {
  double tv = 0.0;
  for (const auto& a : mu.atoms()) tv += std::abs(a.mass);
  if (mu.density()) tv += mu.density()->abs_integral();
  for (const auto& p : mu.products()) tv += total_variation(*p.omega) * detail::abs_sum(p.F) * p.step();
  if (mu.initial()) tv += total_variation(*mu.initial());
  return tv;
}

/// Signed total mass mu(Omega) or mu(Omega_T).
inline double total_mass(const RadonMeasure& mu) {
  double s = 0.0;
  for (const auto& a : mu.atoms()) s += a.mass;
  if (mu.density()) s += mu.density()->integral();
  for (const auto& p : mu.products()) {
    double f = 0.0;
    for (double v : p.F) f += v;
    s += total_mass(*p.omega) * f * p.step();
  }
  if (mu.initial()) s += total_mass(*mu.initial());
  return s;
}

struct JordanParts {
  RadonMeasure positive;
  RadonMeasure negative;
};

JordanParts jordan_decompose(const RadonMeasure& mu);

/// |mu| = mu+ + mu-.
inline RadonMeasure abs_measure(const RadonMeasure& mu) {
  auto [p, n] = jordan_decompose(mu);
  return p + n;
}

inline JordanParts jordan_decompose(const RadonMeasure& mu) {
  RadonMeasure pos(mu.dim(), mu.ambient()), neg(mu.dim(), mu.ambient());

  // Atoms at identical locations are merged before splitting.
  std::map<std::array<double, 4>, double> merged;
  for (const auto& a : mu.atoms()) merged[{a.x[0], a.x[1], a.x[2], a.t}] += a.mass;
  for (const auto& [k, m] : merged) {
    const Point x{k[0], k[1], k[2]};
    if (m > 0.0) pos.add_atom(x, k[3], m);
    if (m < 0.0) neg.add_atom(x, k[3], -m);
  }

  if (mu.density()) {
    GridField fp = *mu.density(), fn = *mu.density();
    for (std::size_t i = 0; i < fp.size(); ++i) {
      fp.values[i] = std::max(mu.density()->values[i], 0.0);
      fn.values[i] = std::max(-mu.density()->values[i], 0.0);
    }
    pos.set_density(std::move(fp));
    neg.set_density(std::move(fn));
  }

  // (omega (x) F)+ = omega+ (x) F+ + omega- (x) F-, and symmetrically for the negative part.
  for (const auto& p : mu.products()) {
    auto [wp, wn] = jordan_decompose(*p.omega);
    std::vector<double> Fp(p.F.size()), Fn(p.F.size());
    for (std::size_t j = 0; j < p.F.size(); ++j) {
      Fp[j] = std::max(p.F[j], 0.0);
      Fn[j] = std::max(-p.F[j], 0.0);
    }
    if (!wp.empty()) {
      pos.add_product(wp, Fp, p.horizon);
      neg.add_product(wp, Fn, p.horizon);
    }
    if (!wn.empty()) {
      pos.add_product(wn, Fn, p.horizon);
      neg.add_product(wn, Fp, p.horizon);
    }
  }

  if (mu.initial()) {
    auto [sp, sn] = jordan_decompose(*mu.initial());
    pos.set_initial(sp);
    neg.set_initial(sn);
  }
  return {std::move(pos), std::move(neg)};
}

// ---------------------------------------------------------------------------
// Ball and cylinder masses

/// How density cells are counted against a ball: whole cell iff its centre is
/// inside, or by the fraction of the cell volume inside (sub-sampled).
enum class BallRule { cell_center, fractional };

namespace detail {

/// Fraction of the spatial cell `c` of `g` lying in the open ball B_rho(x).
inline double cell_fraction_in_ball(const Grid& g, const CellIndex& c, const Point& x, double rho) {
  const int dim = g.dim();
  double near = 0.0, far = 0.0;
  Point lo{}, hi{};
  for (int i = 0; i < dim; ++i) {
    lo[i] = g.domain().lower()[i] + c[i] * g.h(i);
    hi[i] = lo[i] + g.h(i);
    const double dn = std::max({lo[i] - x[i], 0.0, x[i] - hi[i]});
    const double df = std::max(std::abs(x[i] - lo[i]), std::abs(x[i] - hi[i]));
    near += dn * dn;
    far += df * df;
  }
  if (std::sqrt(far) < rho) return 1.0;
  if (std::sqrt(near) >= rho) return 0.0;
  constexpr int kSub = 12;
  const int n1 = kSub, n2 = dim > 1 ? kSub : 1, n3 = dim > 2 ? kSub : 1;
  int inside = 0;
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n2; ++b)
      for (int d = 0; d < n3; ++d) {
        const int idx[3] = {a, b, d};
        double r2 = 0.0;
        for (int i = 0; i < dim; ++i) {
          const double y = lo[i] + (idx[i] + 0.5) / kSub * g.h(i);
          r2 += (y - x[i]) * (y - x[i]);
        }
        if (r2 < rho * rho) ++inside;
      }
  return static_cast<double>(inside) / (n1 * n2 * n3);
}

/// Weight of a spatial cell against B_rho(x) under `rule`.
inline double ball_weight(const Grid& g, std::size_t s, const Point& x, double rho, BallRule rule) {
  if (rule == BallRule::cell_center) return distance(g.center(s), x, g.dim()) < rho ? 1.0 : 0.0;
  return cell_fraction_in_ball(g, g.multi(s), x, rho);
}

/// Fraction of time slab (lo, hi) inside the open window (t - w, t + w).
inline double window_fraction(double lo, double hi, double t, double w, BallRule rule) {
  if (rule == BallRule::cell_center) return std::abs(0.5 * (lo + hi) - t) < w ? 1.0 : 0.0;
  const double a = std::max(lo, t - w), b = std::min(hi, t + w);
  return b > a ? (b - a) / (hi - lo) : 0.0;
}

}  // namespace detail

/// |nu|(B_rho(x) cap Omega) for a space measure.
inline double measure_of_ball(const RadonMeasure& nu, const Point& x, double rho,
                              BallRule rule = BallRule::cell_center) {
  if (!(rho > 0.0)) throw DomainError("ball radius must be positive");
  if (!nu.is_space()) throw PreconditionError("measure_of_ball needs a space measure");
  const int dim = nu.dim();
  double m = 0.0;
  for (const auto& a : nu.atoms())
    if (distance(a.x, x, dim) < rho) m += std::abs(a.mass);
  if (nu.density()) {
    const GridField& f = *nu.density();
    const double vol = f.grid.cell_volume();
    for (std::size_t s = 0; s < f.size(); ++s) {
      if (f.values[s] == 0.0) continue;
      const double w = detail::ball_weight(f.grid, s, x, rho, rule);
      if (w > 0.0) m += w * std::abs(f.values[s]) * vol;
    }
  }
  return m;
}

/// |mu|(Q_{rho, tau rho^p}(x, t) cap Omega_T) with Q = B_rho(x) x (t - tau rho^p, t + tau rho^p).
inline double measure_of_cylinder(const RadonMeasure& mu, const Point& x, double t, double rho, double tau = 1.0,
                                  double p = 2.0, BallRule rule = BallRule::cell_center) {
  if (!(rho > 0.0) || !(tau > 0.0)) throw DomainError("cylinder radius and time scale must be positive");
  if (mu.is_space()) throw PreconditionError("measure_of_cylinder needs a space-time measure");
  const int dim = mu.dim();
  const double w = tau * std::pow(rho, p);
  double m = 0.0;
  for (const auto& a : mu.atoms())
    if (distance(a.x, x, dim) < rho && std::abs(a.t - t) < w) m += std::abs(a.mass);
  if (mu.density()) {
    const GridField& f = *mu.density();
    const Grid& g = f.grid;
    const std::size_t S = g.space_cells();
    const double cm = g.cell_measure();
    std::vector<double> slab_w(g.time_steps());
    for (int j = 0; j < g.time_steps(); ++j) slab_w[j] = detail::window_fraction(j * g.dt(), (j + 1) * g.dt(), t, w, rule);
    for (std::size_t s = 0; s < S; ++s) {
      const double bw = detail::ball_weight(g, s, x, rho, rule);
      if (bw == 0.0) continue;
      for (int j = 0; j < g.time_steps(); ++j)
        if (slab_w[j] > 0.0) m += bw * slab_w[j] * std::abs(f.at(j, s)) * cm;
    }
  }
  for (const auto& p_ : mu.products()) {
    const double wb = measure_of_ball(*p_.omega, x, rho, rule);
    if (wb == 0.0) continue;
    double ft = 0.0;
    for (std::size_t j = 0; j < p_.F.size(); ++j) {
      const double lo = j * p_.step(), hi = lo + p_.step();
      ft += std::abs(p_.F[j]) * p_.step() * detail::window_fraction(lo, hi, t, w, rule);
    }
    m += wb * ft;
  }
  if (mu.initial() && std::abs(t) < w) m += measure_of_ball(*mu.initial(), x, rho, rule);
  return m;
}

// ---------------------------------------------------------------------------
// Support elements: every mass-carrying piece of |mu| reduced to its spatial
// and temporal distance from a query point, with density cells placed at
// their centres. Potentials evaluate cylinder masses for many radii from one
// sorted pass over these.

struct SupportElement {
  double dist = 0.0;  ///< spatial distance to the query point
  double lag = 0.0;   ///< |t_e - t|
  double mass = 0.0;  ///< nonnegative
};

namespace detail {
inline void collect_space(const RadonMeasure& nu, const Point& x, double lag, double factor,
                          std::vector<SupportElement>& out) {
  const int dim = nu.dim();
  for (const auto& a : nu.atoms())
    if (a.mass != 0.0) out.push_back({distance(a.x, x, dim), lag, std::abs(a.mass) * factor});
  if (nu.density()) {
    const GridField& f = *nu.density();
    const double vol = f.grid.cell_volume();
    for (std::size_t s = 0; s < f.size(); ++s)
      if (f.values[s] != 0.0) out.push_back({distance(f.grid.center(s), x, dim), lag, std::abs(f.values[s]) * vol * factor});
  }
}
}  // namespace detail

/// Support elements of |mu| relative to (x, t); `t` ignored for space measures.
inline std::vector<SupportElement> support_elements(const RadonMeasure& mu, const Point& x, double t = 0.0) {
  std::vector<SupportElement> out;
  if (mu.is_space()) {
    detail::collect_space(mu, x, 0.0, 1.0, out);
    return out;
  }
  const int dim = mu.dim();
  for (const auto& a : mu.atoms())
    if (a.mass != 0.0) out.push_back({distance(a.x, x, dim), std::abs(a.t - t), std::abs(a.mass)});
  if (mu.density()) {
    const GridField& f = *mu.density();
    const Grid& g = f.grid;
    const std::size_t S = g.space_cells();
    const double cm = g.cell_measure();
    std::vector<double> dist(S);
    for (std::size_t s = 0; s < S; ++s) dist[s] = distance(g.center(s), x, dim);
    for (int j = 0; j < g.time_steps(); ++j) {
      const double lag = std::abs(g.slab_mid(j) - t);
      for (std::size_t s = 0; s < S; ++s) {
        const double v = f.at(j, s);
        if (v != 0.0) out.push_back({dist[s], lag, std::abs(v) * cm});
      }
    }
  }
  for (const auto& p : mu.products()) {
    for (std::size_t j = 0; j < p.F.size(); ++j) {
      if (p.F[j] == 0.0) continue;
      const double mid = (j + 0.5) * p.step();
      detail::collect_space(*p.omega, x, std::abs(mid - t), std::abs(p.F[j]) * p.step(), out);
    }
  }
  if (mu.initial()) detail::collect_space(*mu.initial(), x, std::abs(t), 1.0, out);
  return out;
}

// ---------------------------------------------------------------------------
// Mollification

namespace detail {

/// Primitive of (1 - u^2)^2 on [-1, 1], normalised to total 1.
inline double bump_cdf(double u) {
  u = std::clamp(u, -1.0, 1.0);
  const double F = u - 2.0 * u * u * u / 3.0 + u * u * u * u * u / 5.0;
  return (F + 8.0 / 15.0) / (16.0 / 15.0);
}

/// Fraction of a 1D bump of half-width `scale` centred at y inside (lo, hi).
inline double bump_mass(double y, double scale, double lo, double hi) {
  return bump_cdf((hi - y) / scale) - bump_cdf((lo - y) / scale);
}

/// Add mass * bump(x) cell-averaged to the space slice `slab` of `f` (density units).
inline void deposit_bump(GridField& f, int slab, const Point& x, double mass, double scale) {
  const Grid& g = f.grid;
  const int dim = g.dim();
  std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};
  std::array<std::vector<double>, 3> w;
  for (int i = 0; i < kMaxDim; ++i) {
    if (i >= dim) {
      w[i] = {1.0};
      continue;
    }
    const double x0 = g.domain().lower()[i];
    lo[i] = std::max(0, static_cast<int>(std::floor((x[i] - scale - x0) / g.h(i))));
    hi[i] = std::min(g.cells(i) - 1, static_cast<int>(std::floor((x[i] + scale - x0) / g.h(i))));
    for (int k = lo[i]; k <= hi[i]; ++k) w[i].push_back(bump_mass(x[i], scale, x0 + k * g.h(i), x0 + (k + 1) * g.h(i)));
  }
  const double inv_vol = 1.0 / g.cell_volume();
  for (int a = lo[0]; a <= hi[0]; ++a)
    for (int b = lo[1]; b <= hi[1]; ++b)
      for (int c = lo[2]; c <= hi[2]; ++c) {
        const double wt = w[0][a - lo[0]] * w[1][b - lo[1]] * w[2][c - lo[2]];
        if (wt > 0.0) f.at(slab, g.linear({a, b, c})) += mass * wt * inv_vol;
      }
}

/// Spatially mollified density of a space measure on grid g (slab 0 of the result).
inline GridField mollify_space(const RadonMeasure& nu, double scale, const Grid& g) {
  GridField out = GridField::space(g);
  for (const auto& a : nu.atoms()) deposit_bump(out, 0, a.x, a.mass, scale);
  if (nu.density()) {
    const GridField& f = *nu.density();
    const double vol = f.grid.cell_volume();
    for (std::size_t s = 0; s < f.size(); ++s)
      if (f.values[s] != 0.0) deposit_bump(out, 0, f.grid.center(s), f.values[s] * vol, scale);
  }
  return out;
}

/// Integral of a piecewise-constant profile over (lo, hi).
inline double profile_integral(const ProductPart& p, double lo, double hi) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.F.size(); ++j) {
    const double a = std::max(lo, j * p.step()), b = std::min(hi, (j + 1) * p.step());
    if (b > a) s += p.F[j] * (b - a);
  }
  return s;
}

}  // namespace detail

/// Convolution of mu with the normalised tensor-product bump (1 - (s/scale)^2)_+^2,
/// integrated exactly over grid cells. For space-time measures the time
/// direction is mollified with half-width `time_scale` when given; otherwise
/// each time slab receives the mass of mu over that slab, and sigma (x) delta_0
/// lands in the first slab. Mass leaving the box is dropped.
inline GridField mollify(const RadonMeasure& mu, double scale, const Grid& grid,
                         std::optional<double> time_scale = std::nullopt) {
  if (!(scale > 0.0)) throw DomainError("mollification scale must be positive");
  if (scale < grid.h_max() * (1.0 - 1e-12)) throw ResolutionError("mollification scale below one cell width");
  if (mu.dim() != grid.dim()) throw PreconditionError("measure and grid dimensions differ");
  if (mu.is_space()) return detail::mollify_space(mu, scale, grid);

  if (time_scale && *time_scale < grid.dt() * (1.0 - 1e-12))
    throw ResolutionError("time mollification scale below one time step");
  GridField out = GridField::spacetime(grid);
  const int nt = grid.time_steps();
  const double dt = grid.dt();
  const std::size_t S = grid.space_cells();

  auto time_weights = [&](double t0) {
    std::vector<double> w(nt, 0.0);
    if (time_scale) {
      for (int j = 0; j < nt; ++j) w[j] = detail::bump_mass(t0, *time_scale, j * dt, (j + 1) * dt);
    } else {
      w[grid.slab_of(t0)] = 1.0;
    }
    return w;
  };
  auto add_space = [&](const GridField& sp, const std::vector<double>& tw) {
    for (int j = 0; j < nt; ++j) {
      if (tw[j] == 0.0) continue;
      for (std::size_t s = 0; s < S; ++s) out.at(j, s) += sp.values[s] * tw[j] / dt;
    }
  };

  for (const auto& a : mu.atoms()) {
    GridField sp = GridField::space(grid);
    detail::deposit_bump(sp, 0, a.x, a.mass, scale);
    add_space(sp, time_weights(a.t));
  }
  if (mu.density()) {
    const GridField& f = *mu.density();
    const Grid& fg = f.grid;
    for (int jf = 0; jf < fg.time_steps(); ++jf) {
      GridField sp = GridField::space(grid);
      bool any = false;
      for (std::size_t s = 0; s < fg.space_cells(); ++s) {
        const double v = f.at(jf, s);
        if (v == 0.0) continue;
        any = true;
        detail::deposit_bump(sp, 0, fg.center(s), v * fg.cell_volume(), scale);
      }
      if (!any) continue;
      // density of slab jf carries mass over a slab of width fg.dt()
      std::vector<double> tw(nt, 0.0);
      if (time_scale) {
        tw = time_weights(fg.slab_mid(jf));
      } else {
        const double lo = jf * fg.dt(), hi = lo + fg.dt();
        for (int j = 0; j < nt; ++j) {
          const double a = std::max(lo, j * dt), b = std::min(hi, (j + 1) * dt);
          if (b > a) tw[j] = (b - a) / fg.dt();
        }
      }
      for (auto& x : tw) x *= fg.dt();
      add_space(sp, tw);
    }
  }
  for (const auto& p : mu.products()) {
    const GridField sp = detail::mollify_space(*p.omega, scale, grid);
    std::vector<double> tw(nt, 0.0);
    for (int j = 0; j < nt; ++j) tw[j] = detail::profile_integral(p, j * dt, (j + 1) * dt);
    add_space(sp, tw);
  }
  if (mu.initial()) {
    const GridField sp = detail::mollify_space(*mu.initial(), scale, grid);
    std::vector<double> tw(nt, 0.0);
    tw[0] = 1.0;
    add_space(sp, tw);
  }
  return out;
}

}  // namespace dplab
