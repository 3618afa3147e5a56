#pragma once

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "dplab/bessel.hpp"
#include "dplab/geometry.hpp"

namespace dplab {

/// Integer cell index on a lattice with up to four axes (space axes, then time).
using LatticeIndex = std::array<int, 4>;

/// Finite set of lattice cells. Spatial sets use `space_dim` axes; space-time
/// sets add the time axis last. Cell k on axis i covers
/// origin[i] + (k, k+1) * h[i].
struct CompactSet {
  int space_dim = 1;
  bool spacetime = false;
  std::array<double, 4> h{1, 1, 1, 1};
  std::array<double, 4> origin{0, 0, 0, 0};
  std::vector<LatticeIndex> cells;

  int axes() const { return space_dim + (spacetime ? 1 : 0); }
  bool empty() const { return cells.empty(); }

  /// Lattice of a grid: space cells, or space-time cells (time slabs as axis space_dim).
  static CompactSet on_grid(const Grid& g, bool spacetime) {
    CompactSet k;
    k.space_dim = g.dim();
    k.spacetime = spacetime;
    for (int i = 0; i < g.dim(); ++i) {
      k.h[i] = g.h(i);
      k.origin[i] = g.domain().lower()[i];
    }
    if (spacetime) {
      k.h[g.dim()] = g.dt();
      k.origin[g.dim()] = 0.0;
    }
    return k;
  }

  /// Cells of a uniform spatial lattice (spacing h, origin o) whose centres lie in the open ball.
  static CompactSet ball(int N, double h, const Point& center, double r, double o = 0.0) {
    if (!(h > 0.0) || !(r > 0.0)) throw DomainError("ball set needs positive h and radius");
    CompactSet k;
    k.space_dim = N;
    for (int i = 0; i < N; ++i) {
      k.h[i] = h;
      k.origin[i] = o;
    }
    LatticeIndex lo{0, 0, 0, 0}, hi{0, 0, 0, 0};
    for (int i = 0; i < N; ++i) {
      lo[i] = static_cast<int>(std::floor((center[i] - r - o) / h)) - 1;
      hi[i] = static_cast<int>(std::ceil((center[i] + r - o) / h)) + 1;
    }
    for (int a = lo[0]; a <= hi[0]; ++a)
      for (int b = lo[1]; b <= hi[1]; ++b)
        for (int c = lo[2]; c <= hi[2]; ++c) {
          const LatticeIndex ix{a, b, c, 0};
          if (distance(k.center(ix), center, N) < r) k.cells.push_back(ix);
        }
    return k;
  }

  /// The same spatial cells placed in one time cell (index `slab`) of a space-time lattice with step dt.
  CompactSet times_slab(double dt, int slab = 0) const {
    if (spacetime) throw PreconditionError("set is already space-time");
    CompactSet k = *this;
    k.spacetime = true;
    k.h[space_dim] = dt;
    k.origin[space_dim] = 0.0;
    for (auto& c : k.cells) c[space_dim] = slab;
    return k;
  }

  Point center(const LatticeIndex& ix) const {
    Point x{};
    for (int i = 0; i < space_dim; ++i) x[i] = origin[i] + (ix[i] + 0.5) * h[i];
    return x;
  }

  std::pair<LatticeIndex, LatticeIndex> bbox() const {
    if (cells.empty()) throw PreconditionError("empty set has no bounding box");
    LatticeIndex lo = cells[0], hi = cells[0];
    for (const auto& c : cells)
      for (int i = 0; i < axes(); ++i) {
        lo[i] = std::min(lo[i], c[i]);
        hi[i] = std::max(hi[i], c[i]);
      }
    return {lo, hi};
  }

  bool same_lattice(const CompactSet& o) const {
    return space_dim == o.space_dim && spacetime == o.spacetime && h == o.h && origin == o.origin;
  }

  void normalize() {
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  }

  friend CompactSet set_union(const CompactSet& a, const CompactSet& b) {
    if (!a.same_lattice(b)) throw PreconditionError("sets live on different lattices");
    CompactSet u = a;
    u.cells.insert(u.cells.end(), b.cells.begin(), b.cells.end());
    u.normalize();
    return u;
  }

  bool subset_of(const CompactSet& o) const {
    std::set<LatticeIndex> s(o.cells.begin(), o.cells.end());
    return std::all_of(cells.begin(), cells.end(), [&](const LatticeIndex& c) { return s.count(c) > 0; });
  }
};

/// Axis-aligned box of lattice cells, lo inclusive, hi exclusive.
struct LatticeBox {
  LatticeIndex lo{0, 0, 0, 0}, hi{1, 1, 1, 1};

  int extent(int i) const { return hi[i] - lo[i]; }
  bool contains(const LatticeIndex& c, int axes) const {
    for (int i = 0; i < axes; ++i)
      if (c[i] < lo[i] || c[i] >= hi[i]) return false;
    return true;
  }

  /// Box `factor` times the bounding box of `k` (per axis, centred), at least `min_margin` cells each side.
  static LatticeBox around(const CompactSet& k, double factor, int min_margin = 1) {
    const auto [lo, hi] = k.bbox();
    LatticeBox b;
    for (int i = 0; i < 4; ++i) {
      if (i >= k.axes()) {
        b.lo[i] = 0;
        b.hi[i] = 1;
        continue;
      }
      const int n = hi[i] - lo[i] + 1;
      const int margin = std::max(min_margin, static_cast<int>(std::ceil(0.5 * (factor - 1.0) * n)));
      b.lo[i] = lo[i] - margin;
      b.hi[i] = hi[i] + 1 + margin;
    }
    return b;
  }

  friend LatticeBox box_hull(const LatticeBox& a, const LatticeBox& b) {
    LatticeBox r;
    for (int i = 0; i < 4; ++i) {
      r.lo[i] = std::min(a.lo[i], b.lo[i]);
      r.hi[i] = std::max(a.hi[i], b.hi[i]);
    }
    return r;
  }
};

struct CapacityEstimate {
  double value = 0.0;
  double lower_bound = 0.0;           ///< dual value (Bessel) or value itself
  double duality_gap = 0.0;
  double feasibility_residual = 0.0;  ///< sup over the set of (1 - constraint)_+
  double stationarity = 0.0;          ///< projected gradient norm at exit
  int iterations = 0;
  bool converged = true;
  double exponent1 = 0.0, exponent2 = 0.0;  ///< (alpha, s) or (a, b)
  double h = 0.0;
  std::size_t unknowns = 0;
};

// ---------------------------------------------------------------------------
// Bessel capacity

struct BesselCapacityOptions {
  double window_factor = 3.0;
  std::optional<LatticeBox> window;  ///< overrides window_factor (common window for comparisons)
  double padding_extent = 0.0;       ///< geometric far-field cells out to this distance beyond the window
  double padding_ratio = 1.5;
  int near_cells = 4;                ///< exact cell integrals up to this Chebyshev offset
  double tol = 1e-10;
  int max_iter = 100;
};

namespace detail {

struct AxisCells {
  std::vector<double> lo, hi;
  std::vector<int> lattice;  ///< lattice index, or INT_MIN for padding cells
};

inline AxisCells window_axis(const CompactSet& e, const LatticeBox& w, int i, double pad_extent, double ratio) {
  AxisCells ax;
  const double h = e.h[i], o = e.origin[i];
  std::vector<double> left;
  if (pad_extent > 0.0) {
    double x = o + w.lo[i] * h, width = h * ratio, reach = 0.0;
    while (reach < pad_extent) {
      left.push_back(x - width);
      x -= width;
      reach += width;
      width *= ratio;
    }
  }
  // left padding boundaries are stored descending
  for (std::size_t k = left.size(); k-- > 0;) {
    ax.lo.push_back(left[k]);
    ax.hi.push_back(k == 0 ? o + w.lo[i] * h : left[k - 1]);
    ax.lattice.push_back(INT_MIN);
  }
  for (int k = w.lo[i]; k < w.hi[i]; ++k) {
    ax.lo.push_back(o + k * h);
    ax.hi.push_back(o + (k + 1) * h);
    ax.lattice.push_back(k);
  }
  if (pad_extent > 0.0) {
    double x = o + w.hi[i] * h, width = h * ratio, reach = 0.0;
    while (reach < pad_extent) {
      ax.lo.push_back(x);
      ax.hi.push_back(x + width);
      ax.lattice.push_back(INT_MIN);
      x += width;
      reach += width;
      width *= ratio;
    }
  }
  return ax;
}

}  // namespace detail

/// Cap_{G_alpha, s}(E) = inf { sum_i g_i^s |cell_i| : g >= 0, (G_alpha * g)(x_j) >= 1 for every cell centre x_j of E }
/// over piecewise-constant g on a window around E. Solved through the concave
/// dual max_{lambda >= 0} sum(lambda) - (s-1) sum_i |cell_i| g_i(lambda)^s with
/// g_i = ((K^T lambda)_i / (s |cell_i|))^{1/(s-1)}, by projected Newton; the
/// returned value is the primal objective of the final g rescaled to feasibility.
inline CapacityEstimate bessel_capacity(const CompactSet& E, double alpha, double s,
                                        const BesselCapacityOptions& opt = {}) {
  if (E.spacetime) throw PreconditionError("Bessel capacity needs a spatial set");
  if (!(s > 1.0)) throw DomainError("Bessel capacity needs s > 1");
  detail::check_bessel(alpha, E.space_dim);
  CapacityEstimate est;
  est.exponent1 = alpha;
  est.exponent2 = s;
  est.h = E.h[0];
  if (E.empty()) return est;

  CompactSet e = E;
  e.normalize();
  const int N = e.space_dim;
  const LatticeBox win = opt.window ? *opt.window : LatticeBox::around(e, opt.window_factor);
  for (const auto& c : e.cells)
    if (!win.contains(c, N)) throw PreconditionError("set not inside the capacity window");

  std::array<detail::AxisCells, 3> ax;
  for (int i = 0; i < 3; ++i) {
    if (i < N) {
      ax[i] = detail::window_axis(e, win, i, opt.padding_extent, opt.padding_ratio);
    } else {
      ax[i].lo = {0.0};
      ax[i].hi = {0.0};
      ax[i].lattice = {0};
    }
  }
  const int n0 = static_cast<int>(ax[0].lo.size()), n1 = static_cast<int>(ax[1].lo.size()),
            n2 = static_cast<int>(ax[2].lo.size());
  const std::size_t M = static_cast<std::size_t>(n0) * n1 * n2;
  const std::size_t J = e.cells.size();
  est.unknowns = M;

  // Kernel: exact box integrals for near lattice offsets, midpoint values elsewhere.
  double hmin = e.h[0];
  for (int i = 1; i < N; ++i) hmin = std::min(hmin, e.h[i]);
  double far = 0.0;
  for (int i = 0; i < N; ++i) far += std::pow(ax[i].hi.back() - ax[i].lo.front(), 2);
  const RadialBesselTable radial(alpha, N, 0.25 * hmin, std::max(60.0, 2.0 * std::sqrt(far)));
  std::map<std::array<int, 3>, double> near_cache;
  auto near_value = [&](std::array<int, 3> off) {
    for (auto& v : off) v = std::abs(v);
    auto it = near_cache.find(off);
    if (it != near_cache.end()) return it->second;
    Point lo{}, hi{};
    for (int i = 0; i < N; ++i) {
      lo[i] = (off[i] - 0.5) * e.h[i];
      hi[i] = (off[i] + 0.5) * e.h[i];
    }
    const double v = bessel_box_integral(alpha, N, lo, hi);
    near_cache.emplace(off, v);
    return v;
  };

  Eigen::VectorXd w(M);
  Eigen::MatrixXd K(J, M);
  std::size_t m = 0;
  for (int a = 0; a < n0; ++a)
    for (int b = 0; b < n1; ++b)
      for (int c = 0; c < n2; ++c, ++m) {
        const int ai[3] = {a, b, c};
        double vol = 1.0;
        Point mid{};
        bool fine = true;
        std::array<int, 3> lat{0, 0, 0};
        for (int i = 0; i < N; ++i) {
          const auto& A = ax[i];
          vol *= A.hi[ai[i]] - A.lo[ai[i]];
          mid[i] = 0.5 * (A.hi[ai[i]] + A.lo[ai[i]]);
          lat[i] = A.lattice[ai[i]];
          if (lat[i] == INT_MIN) fine = false;
        }
        w[m] = vol;
        for (std::size_t j = 0; j < J; ++j) {
          const auto& cj = e.cells[j];
          double v;
          int cheb = 0;
          std::array<int, 3> off{0, 0, 0};
          if (fine) {
            for (int i = 0; i < N; ++i) {
              off[i] = lat[i] - cj[i];
              cheb = std::max(cheb, std::abs(off[i]));
            }
          }
          if (fine && cheb <= opt.near_cells) {
            v = near_value(off);
          } else {
            v = radial(distance(mid, e.center(cj), N)) * vol;
          }
          K(j, m) = v;
        }
      }

  // Dual objective psi(lambda) = (s-1) sum w g^s - sum lambda, gradient K g - 1.
  const double q = 1.0 / (s - 1.0);
  auto primal_g = [&](const Eigen::VectorXd& lam) {
    Eigen::VectorXd y = K.transpose() * lam;
    Eigen::VectorXd g(M);
    for (std::size_t i = 0; i < M; ++i) g[i] = y[i] > 0.0 ? std::pow(y[i] / (s * w[i]), q) : 0.0;
    return g;
  };
  auto psi_of = [&](const Eigen::VectorXd& lam, const Eigen::VectorXd& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < M; ++i) acc += w[i] * std::pow(g[i], s);
    return (s - 1.0) * acc - lam.sum();
  };

  Eigen::VectorXd lam = Eigen::VectorXd::Ones(J);
  {
    const Eigen::VectorXd g1 = primal_g(lam);
    double A = 0.0;
    for (std::size_t i = 0; i < M; ++i) A += w[i] * std::pow(g1[i], s);
    A *= (s - 1.0);
    lam *= std::pow(static_cast<double>(J) * (s - 1.0) / (A * s), s - 1.0);
  }
  Eigen::VectorXd g = primal_g(lam);
  double psi = psi_of(lam, g);
  Eigen::MatrixXd H;
  const bool quadratic = std::abs(s - 2.0) < 1e-15;
  est.converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    est.iterations = it + 1;
    const Eigen::VectorXd grad = K * g - Eigen::VectorXd::Ones(J);
    double pg = 0.0;
    for (std::size_t j = 0; j < J; ++j) pg = std::max(pg, lam[j] > 0.0 ? std::abs(grad[j]) : std::max(-grad[j], 0.0));
    est.stationarity = pg;
    if (pg <= opt.tol) {
      est.converged = true;
      break;
    }
    if (!quadratic || H.size() == 0) {
      Eigen::VectorXd y = K.transpose() * lam;
      Eigen::VectorXd d(M);
      for (std::size_t i = 0; i < M; ++i) d[i] = y[i] > 0.0 ? g[i] / ((s - 1.0) * y[i]) : 0.0;
      H = K * d.asDiagonal() * K.transpose();
    }
    // free variables: positive, or at the bound with a descent direction into the interior
    const double eps = std::min(1e-3, pg) * lam.maxCoeff();
    std::vector<int> freev;
    for (std::size_t j = 0; j < J; ++j)
      if (!(lam[j] <= eps && grad[j] > 0.0)) freev.push_back(static_cast<int>(j));
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(J);
    if (!freev.empty()) {
      const int F = static_cast<int>(freev.size());
      Eigen::MatrixXd HF(F, F);
      Eigen::VectorXd gF(F);
      for (int a = 0; a < F; ++a) {
        gF[a] = grad[freev[a]];
        for (int b = 0; b < F; ++b) HF(a, b) = H(freev[a], freev[b]);
      }
      HF.diagonal().array() += 1e-14 * HF.diagonal().maxCoeff();
      const Eigen::VectorXd dF = HF.ldlt().solve(-gF);
      for (int a = 0; a < F; ++a) dir[freev[a]] = dF[a];
    }
    for (std::size_t j = 0; j < J; ++j)
      if (lam[j] <= eps && grad[j] > 0.0) dir[j] = -grad[j] / std::max(H(j, j), 1e-300);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Eigen::VectorXd trial = (lam + t * dir).cwiseMax(0.0);
      const Eigen::VectorXd gt = primal_g(trial);
      const double pt = psi_of(trial, gt);
      if (pt <= psi + 1e-4 * grad.dot(trial - lam) || (ls > 40 && pt <= psi)) {
        lam = trial;
        g = gt;
        psi = pt;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }

  const Eigen::VectorXd Kg = K * g;
  const double mink = Kg.minCoeff();
  est.feasibility_residual = std::max(0.0, 1.0 - mink);
  double obj = 0.0;
  for (std::size_t i = 0; i < M; ++i) obj += w[i] * std::pow(g[i], s);
  const double dual = -psi;
  // rescale the primal candidate to exact feasibility
  if (mink > 0.0) obj *= std::pow(1.0 / mink, s);
  est.value = obj;
  est.lower_bound = dual;
  est.duality_gap = obj - dual;
  const Eigen::VectorXd Kg2 = Kg / mink;
  est.feasibility_residual = std::max(0.0, 1.0 - Kg2.minCoeff());
  return est;
}

// ---------------------------------------------------------------------------
// Parabolic capacity

struct ParabolicCapacityOptions {
  double window_factor = 3.0;
  std::optional<LatticeBox> window;  ///< overrides window_factor
  int dilation = 1;                  ///< constraint on K dilated by this many cells
  double level = 1.0;                ///< phi >= level on the dilated set
  double tol = 1e-8;                 ///< relative projected-gradient tolerance
  int max_iter = 400;
};

namespace detail {

/// One term c * ||A phi||_{L^e} of the discretised anisotropic norm.
struct NormTerm {
  Eigen::SparseMatrix<double, Eigen::RowMajor> A;
  double weight;    ///< cell measure attached to each output entry
  double exponent;
  double multiplicity;
  double eta = 0.0;  ///< smoothing of |v| for exponents below 2
};

struct NormEval {
  double n = 0.0;
  Eigen::VectorXd v, sig, q;  ///< A phi, smoothed |v|, dn/dv
  double eta = 0.0;
};

inline NormEval eval_norm(const NormTerm& t, const Eigen::VectorXd& phi) {
  NormEval r;
  r.v = t.A * phi;
  const double e = t.exponent;
  r.eta = t.eta;
  r.sig = (r.v.array().square() + r.eta * r.eta).sqrt();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < r.v.size(); ++i) acc += t.weight * std::pow(r.sig[i], e);
  r.n = std::pow(acc, 1.0 / e);
  r.q.resize(r.v.size());
  for (Eigen::Index i = 0; i < r.v.size(); ++i)
    r.q[i] = r.n > 0.0 && r.sig[i] > 0.0 ? t.weight * std::pow(r.sig[i] / r.n, e - 1.0) * r.v[i] / r.sig[i] : 0.0;
  return r;
}

/// Hessian of ||.||_e at v applied to u.
inline Eigen::VectorXd norm_hessian_apply(const NormTerm& t, const NormEval& ev, const Eigen::VectorXd& u) {
  const double e = t.exponent;
  Eigen::VectorXd out(u.size());
  if (ev.n <= 0.0) return Eigen::VectorXd::Zero(u.size());
  const double qu = ev.q.dot(u);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double sg = ev.sig[i];
    double diag = 0.0;
    if (sg > 0.0) {
      const double r2 = ev.v[i] * ev.v[i] / (sg * sg);
      diag = t.weight * std::pow(sg / ev.n, e - 2.0) * (1.0 + (e - 2.0) * r2) / ev.n;
    }
    out[i] = diag * u[i] - (e - 1.0) * ev.q[i] * qu / ev.n;
  }
  return out;
}

class WindowIndexer {
 public:
  WindowIndexer(const LatticeBox& b, int axes) : box_(b), axes_(axes) {
    size_ = 1;
    for (int i = 0; i < axes; ++i) size_ *= static_cast<std::size_t>(b.extent(i));
  }
  std::size_t size() const { return size_; }
  /// Linear index, or -1 outside the window (ghost value zero).
  long at(LatticeIndex c) const {
    long k = 0;
    for (int i = 0; i < axes_; ++i) {
      if (c[i] < box_.lo[i] || c[i] >= box_.hi[i]) return -1;
      k = k * box_.extent(i) + (c[i] - box_.lo[i]);
    }
    return k;
  }
  LatticeIndex cell(std::size_t k) const {
    LatticeIndex c{0, 0, 0, 0};
    for (int i = axes_ - 1; i >= 0; --i) {
      c[i] = box_.lo[i] + static_cast<int>(k % box_.extent(i));
      k /= box_.extent(i);
    }
    return c;
  }

 private:
  LatticeBox box_;
  int axes_;
  std::size_t size_ = 1;
};

}  // namespace detail

/// Cap_{2,1,a,b}(K) = inf (||phi||_a + ||phi_t||_b + ||grad phi||_a + sum_{i,j} ||phi_{x_i x_j}||_a)^a
/// over grid functions on a window around K, zero outside the window, with
/// phi >= level on K dilated by `dilation` cells. The gradient norm is the
/// l^a combination of the axis derivatives (the Euclidean one for a = 2).
/// Minimised by projected Newton-CG on the squared norm, starting from the
/// constant feasible function.
inline CapacityEstimate parabolic_capacity(const CompactSet& Kset, double a, double b,
                                           const ParabolicCapacityOptions& opt = {}) {
  if (!Kset.spacetime) throw PreconditionError("parabolic capacity needs a space-time set");
  if (!(a > 1.0) || !(b > 1.0)) throw DomainError("parabolic capacity needs a, b > 1");
  if (!(opt.level > 0.0)) throw DomainError("constraint level must be positive");
  CapacityEstimate est;
  est.exponent1 = a;
  est.exponent2 = b;
  est.h = Kset.h[0];
  if (Kset.empty()) return est;

  const int N = Kset.space_dim, axes = Kset.axes();
  // dilated constraint set
  std::set<LatticeIndex> dil;
  for (const auto& c : Kset.cells) {
    const int r = opt.dilation;
    LatticeIndex d{0, 0, 0, 0};
    std::function<void(int)> rec = [&](int i) {
      if (i == axes) {
        LatticeIndex x = c;
        for (int k = 0; k < axes; ++k) x[k] += d[k];
        dil.insert(x);
        return;
      }
      for (d[i] = -r; d[i] <= r; ++d[i]) rec(i + 1);
    };
    rec(0);
  }
  CompactSet D = Kset;
  D.cells.assign(dil.begin(), dil.end());
  const LatticeBox win = opt.window ? *opt.window : LatticeBox::around(D, opt.window_factor);
  for (const auto& c : D.cells)
    if (!win.contains(c, axes)) throw PreconditionError("dilated set not inside the capacity window");
  const detail::WindowIndexer idx(win, axes);
  const std::size_t n = idx.size();
  est.unknowns = n;

  double cm = 1.0;
  for (int i = 0; i < axes; ++i) cm *= Kset.h[i];

  using Trip = Eigen::Triplet<double>;
  std::vector<detail::NormTerm> terms;
  auto make = [&](std::vector<Trip>& tr, long rows, double e, double mult) {
    detail::NormTerm t;
    t.A.resize(rows, static_cast<long>(n));
    t.A.setFromTriplets(tr.begin(), tr.end());
    t.weight = cm;
    t.exponent = e;
    t.multiplicity = mult;
    terms.push_back(std::move(t));
  };
  // enumerate faces/corners: lattice positions from lo-1 .. hi-1 along the differenced axes
  auto for_box = [&](LatticeIndex lo, LatticeIndex hi, auto&& fn) {
    LatticeIndex c{0, 0, 0, 0};
    std::function<void(int)> rec = [&](int i) {
      if (i == axes) {
        fn(c);
        return;
      }
      for (c[i] = lo[i]; c[i] < hi[i]; ++c[i]) rec(i + 1);
    };
    rec(0);
  };
  auto add = [&](std::vector<Trip>& tr, long row, LatticeIndex c, double v) {
    const long k = idx.at(c);
    if (k >= 0) tr.emplace_back(row, k, v);
  };

  {  // phi
    std::vector<Trip> tr;
    for (std::size_t k = 0; k < n; ++k) tr.emplace_back(static_cast<long>(k), static_cast<long>(k), 1.0);
    make(tr, static_cast<long>(n), a, 1.0);
  }
  auto first_diff = [&](int axis, std::vector<Trip>& tr, long& row) {
    LatticeIndex lo = win.lo, hi = win.hi;
    lo[axis] -= 1;
    for_box(lo, hi, [&](LatticeIndex c) {
      LatticeIndex c1 = c;
      c1[axis] += 1;
      add(tr, row, c1, 1.0 / Kset.h[axis]);
      add(tr, row, c, -1.0 / Kset.h[axis]);
      ++row;
    });
  };
  {  // phi_t
    std::vector<Trip> tr;
    long row = 0;
    first_diff(N, tr, row);
    make(tr, row, b, 1.0);
  }
  {  // grad phi, axis derivatives stacked
    std::vector<Trip> tr;
    long row = 0;
    for (int i = 0; i < N; ++i) first_diff(i, tr, row);
    make(tr, row, a, 1.0);
  }
  for (int i = 0; i < N; ++i) {  // phi_{x_i x_i}
    std::vector<Trip> tr;
    long row = 0;
    const double h2 = Kset.h[i] * Kset.h[i];
    for_box(win.lo, win.hi, [&](LatticeIndex c) {
      LatticeIndex l = c, r = c;
      l[i] -= 1;
      r[i] += 1;
      add(tr, row, l, 1.0 / h2);
      add(tr, row, c, -2.0 / h2);
      add(tr, row, r, 1.0 / h2);
      ++row;
    });
    make(tr, row, a, 1.0);
  }
  for (int i = 0; i < N; ++i)  // phi_{x_i x_j} = phi_{x_j x_i}, i < j, counted twice
    for (int j = i + 1; j < N; ++j) {
      std::vector<Trip> tr;
      long row = 0;
      LatticeIndex lo = win.lo, hi = win.hi;
      lo[i] -= 1;
      lo[j] -= 1;
      const double hh = Kset.h[i] * Kset.h[j];
      for_box(lo, hi, [&](LatticeIndex c) {
        LatticeIndex c10 = c, c01 = c, c11 = c;
        c10[i] += 1;
        c01[j] += 1;
        c11[i] += 1;
        c11[j] += 1;
        add(tr, row, c11, 1.0 / hh);
        add(tr, row, c10, -1.0 / hh);
        add(tr, row, c01, -1.0 / hh);
        add(tr, row, c, 1.0 / hh);
        ++row;
      });
      make(tr, row, a, 2.0);
    }

  std::vector<char> bound(n, 0);
  for (const auto& c : D.cells) bound[idx.at(c)] = 1;
  const double L = opt.level;

  Eigen::VectorXd phi = Eigen::VectorXd::Constant(static_cast<long>(n), L);
  std::vector<detail::NormEval> ev(terms.size());
  auto evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    double S = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      ev[k] = detail::eval_norm(terms[k], x);
      S += terms[k].multiplicity * ev[k].n;
    }
    if (grad) {
      Eigen::VectorXd gS = Eigen::VectorXd::Zero(x.size());
      for (std::size_t k = 0; k < terms.size(); ++k) gS += terms[k].multiplicity * (terms[k].A.transpose() * ev[k].q);
      *grad = S * gS;  // gradient of S^2 / 2
    }
    return S;
  };
  auto project = [&](Eigen::VectorXd x) {
    for (std::size_t k = 0; k < n; ++k)
      if (bound[k] && x[k] < L) x[k] = L;
    return x;
  };

  // exponents below 2: smooth |v| with a fixed eta, tightened in stages
  std::vector<double> scale(terms.size(), 0.0);
  bool smooth = false;
  for (std::size_t k = 0; k < terms.size(); ++k)
    if (terms[k].exponent < 2.0) {
      smooth = true;
      scale[k] = (terms[k].A * phi).cwiseAbs().maxCoeff();
    }
  const std::vector<double> stages = smooth ? std::vector<double>{1e-2, 1e-4, 1e-6} : std::vector<double>{0.0};

  Eigen::VectorXd grad;
  double S = 0.0;
  double g0 = 0.0;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> pre;
  est.iterations = 0;
  for (const double rel : stages) {
  for (std::size_t k = 0; k < terms.size(); ++k) terms[k].eta = rel * scale[k];
  S = evaluate(phi, &grad);
  est.converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    ++est.iterations;
    const Eigen::VectorXd pgv = phi - project(phi - grad);
    const double pg = pgv.cwiseAbs().maxCoeff();
    if (g0 == 0.0) g0 = std::max(pg, 1e-300);
    est.stationarity = pg / g0;
    if (pg <= opt.tol * g0) {
      est.converged = true;
      break;
    }
    const double eps = std::min(1e-3 * L, pg);
    std::vector<char> active(n, 0);
    for (std::size_t k = 0; k < n; ++k) active[k] = bound[k] && phi[k] <= L + eps && grad[k] > 0.0;

    // Hessian of S^2/2: grad S grad S^T + S Hess S, on free variables
    Eigen::VectorXd gS = grad / S;
    auto hess = [&](const Eigen::VectorXd& u) {
      Eigen::VectorXd r = gS * gS.dot(u);
      for (std::size_t k = 0; k < terms.size(); ++k) {
        const Eigen::VectorXd Au = terms[k].A * u;
        r += S * terms[k].multiplicity * (terms[k].A.transpose() * detail::norm_hessian_apply(terms[k], ev[k], Au));
      }
      for (std::size_t k = 0; k < n; ++k)
        if (active[k]) r[k] = 0.0;
      return r;
    };
    // Preconditioner: the Hessian without its rank-one corrections (which only
    // lower it), assembled sparse and factored once per Newton step.
    Eigen::SparseMatrix<double> P(static_cast<long>(n), static_cast<long>(n));
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const auto& t = terms[k];
      const double e = t.exponent;
      if (ev[k].n <= 0.0) continue;
      Eigen::VectorXd dd(t.A.rows());
      for (Eigen::Index r = 0; r < t.A.rows(); ++r) {
        const double sg = ev[k].sig[r];
        if (sg <= 0.0) {
          dd[r] = 0.0;
          continue;
        }
        const double r2 = ev[k].v[r] * ev[k].v[r] / (sg * sg);
        dd[r] = S * t.multiplicity * t.weight * std::pow(sg / ev[k].n, e - 2.0) * (1.0 + (e - 2.0) * r2) / ev[k].n;
      }
      const Eigen::SparseMatrix<double> At = t.A;
      P += Eigen::SparseMatrix<double>(At.transpose() * dd.asDiagonal() * At);
    }
    {
      std::vector<Eigen::Triplet<double>> fix;
      const double dmax = P.diagonal().maxCoeff();
      for (std::size_t k = 0; k < n; ++k) fix.emplace_back(k, k, active[k] ? dmax : 1e-12 * dmax + gS[k] * gS[k]);
      Eigen::SparseMatrix<double> F(static_cast<long>(n), static_cast<long>(n));
      F.setFromTriplets(fix.begin(), fix.end());
      // decouple active variables
      for (int c = 0; c < P.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator itP(P, c); itP; ++itP)
          if (active[itP.row()] || active[itP.col()]) itP.valueRef() = 0.0;
      P += F;
      P.prune(0.0);
    }
    pre.compute(P);
    const bool use_pre = pre.info() == Eigen::Success;
    auto precond = [&](const Eigen::VectorXd& r) -> Eigen::VectorXd {
      if (use_pre) return pre.solve(r);
      return r;
    };
    Eigen::VectorXd rhs = -grad;
    for (std::size_t k = 0; k < n; ++k)
      if (active[k]) rhs[k] = 0.0;
    // preconditioned CG
    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<long>(n)), r = rhs;
    Eigen::VectorXd z = precond(r), p = z;
    double rz = r.dot(z);
    const double rn0 = r.norm();
    const double forcing = std::min(0.1, std::sqrt(pg / g0));
    for (int cg = 0; cg < 200 && r.norm() > forcing * rn0; ++cg) {
      const Eigen::VectorXd Hp = hess(p);
      const double pHp = p.dot(Hp);
      if (pHp <= 0.0) {
        if (cg == 0) d = z;
        break;
      }
      const double alpha = rz / pHp;
      d += alpha * p;
      r -= alpha * Hp;
      z = precond(r);
      const double rz1 = r.dot(z);
      p = z + (rz1 / rz) * p;
      rz = rz1;
    }
    const double J0 = 0.5 * S * S;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      const Eigen::VectorXd trial = project(phi + t * d);
      const double St = evaluate(trial, nullptr);
      if (0.5 * St * St <= J0 + 1e-4 * grad.dot(trial - phi)) {
        phi = trial;
        moved = true;
        break;
      }
    }
    if (!moved) {
      // no descent left at roundoff level
      evaluate(phi, &grad);
      est.converged = est.stationarity <= 1e-6;
      break;
    }
    S = evaluate(phi, &grad);
  }
  }
  S = evaluate(phi, &grad);
  est.value = std::pow(S, a);
  est.lower_bound = est.value;
  double viol = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (bound[k]) viol = std::max(viol, L - phi[k]);
  est.feasibility_residual = viol / L;
  return est;
}

// ---------------------------------------------------------------------------
// Small-ball scaling of the Bessel capacity

struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> radii, values;
  std::vector<CapacityEstimate> estimates;
};

/// Least-squares slope of log Cap_{G_alpha,s}(B_r) against log r. Each ball is
/// discretised self-similarly with `cells_across` cells over its diameter.
inline ScalingFit capacity_scaling_exponent(double alpha, double s, const std::vector<double>& radii, int N,
                                            int cells_across = 6, const BesselCapacityOptions& opt = {}) {
  if (radii.size() < 3) throw PreconditionError("scaling fit needs at least three radii");
  if (cells_across < 3) throw ResolutionError("balls need at least three cells across");
  ScalingFit fit;
  for (double r : radii) {
    if (!(r > 0.0)) throw DomainError("radii must be positive");
    const double h = 2.0 * r / cells_across;
    const CompactSet ball = CompactSet::ball(N, h, Point{0.0, 0.0, 0.0}, r, -0.5 * cells_across * h);
    if (ball.empty()) throw ResolutionError("ball not resolved by the grid");
    auto est = bessel_capacity(ball, alpha, s, opt);
    fit.radii.push_back(r);
    fit.values.push_back(est.value);
    fit.estimates.push_back(est);
  }
  const std::size_t k = radii.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += std::log(fit.radii[i]);
    my += std::log(fit.values[i]);
  }
  mx /= k;
  my /= k;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double dx = std::log(fit.radii[i]) - mx;
    sxy += dx * (std::log(fit.values[i]) - my);
    sxx += dx * dx;
  }
  if (sxx <= 0.0) throw PreconditionError("scaling fit needs distinct radii");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

}  // namespace dplab
