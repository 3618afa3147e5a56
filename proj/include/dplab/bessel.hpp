#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dplab/geometry.hpp"
#include "dplab/potentials.hpp"

namespace dplab {

namespace detail {

inline void check_bessel(double alpha, int N) {
  if (!(alpha > 0.0)) throw DomainError("Bessel order alpha must be positive");
  if (N < 1 || N > kMaxDim) throw DomainError("dimension must be 1, 2 or 3");
}

inline double log_quad(const auto& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 20, 1e-12);
}

inline double delta_cap(double alpha, int N) { return 800.0 + 10.0 * std::abs(alpha - N); }

}  // namespace detail

/// Bessel kernel
///   G_alpha(r) = 1 / ((4 pi)^{N/2} Gamma(alpha/2)) int_0^inf e^{-d} e^{-r^2/(4d)} d^{(alpha-N)/2} dd/d,
/// normalised to unit total integral, by adaptive quadrature in log d.
inline PotentialValue bessel_kernel(double alpha, double r, int N) {
  detail::check_bessel(alpha, N);
  if (r < 0.0) throw DomainError("radius must be nonnegative");
  const double c = 1.0 / (std::pow(4.0 * std::numbers::pi, 0.5 * N) * std::tgamma(0.5 * alpha));
  const double nu = 0.5 * (alpha - N);
  if (r == 0.0) {
    if (alpha <= N) return {0.0, true};
    return {c * std::tgamma(nu), false};
  }
  const double r2 = r * r;
  auto f = [&](double s) {
    const double d = std::exp(s);
    return std::exp(nu * s - d - r2 / (4.0 * d));
  };
  const double lo = std::log(r2 / 2800.0), hi = std::log(detail::delta_cap(alpha, N));
  if (lo >= hi) return {0.0, false};
  return {c * detail::log_quad(f, lo, hi), false};
}

namespace detail {

/// int_a^b of the 1D heat kernel with variance 2d, for a < b; uses erfc when
/// both ends lie on one side to avoid cancellation.
inline double heat_interval(double a, double b, double sd) {
  const double A = a / sd, B = b / sd;
  if (A >= 0.0) return 0.5 * (std::erfc(A) - std::erfc(B));
  if (B <= 0.0) return 0.5 * (std::erfc(-B) - std::erfc(-A));
  return 0.5 * (std::erf(B) - std::erf(A));
}

}  // namespace detail

/// int_box G_alpha(y) dy for the box prod_i (lo[i], hi[i]), exact up to quadrature:
/// the heat-kernel mass of the box is a product of erf differences, integrated
/// against the subordinator e^{-d} d^{alpha/2 - 1} / Gamma(alpha/2).
inline double bessel_box_integral(double alpha, int N, const Point& lo, const Point& hi) {
  detail::check_bessel(alpha, N);
  bool inside = true;
  double gap = 0.0, face = std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i) {
    if (lo[i] > 0.0 || hi[i] < 0.0) {
      inside = false;
      gap = std::max(gap, std::max(lo[i], -hi[i]));
    } else {
      face = std::min({face, -lo[i], hi[i]});
    }
  }
  const double scale = inside ? face : gap;
  const double d0 = scale > 0.0 ? std::pow(scale / 20.0, 2) : 1e-300;
  const double half = 0.5 * alpha;
  double head = 0.0;
  // below d0 the heat kernel has (numerically) all its mass inside / outside the box
  if (inside) head = boost::math::tgamma_lower(half, d0);
  auto f = [&](double s) {
    const double d = std::exp(s);
    const double sd = 2.0 * std::sqrt(d);
    double t = 1.0;
    for (int i = 0; i < N && t > 0.0; ++i) t *= detail::heat_interval(lo[i], hi[i], sd);
    return std::exp(half * s - d) * t;
  };
  const double hi_s = std::log(detail::delta_cap(alpha, N));
  const double lo_s = std::log(d0);
  const double tail = lo_s < hi_s ? detail::log_quad(f, lo_s, hi_s) : 0.0;
  return (head + tail) / std::tgamma(half);
}

/// log-log cubic interpolation of G_alpha on [r_lo, r_hi]; zero beyond r_hi,
/// direct quadrature below r_lo.
class RadialBesselTable {
 public:
  RadialBesselTable(double alpha, int N, double r_lo, double r_hi = 60.0, int nodes = 4096)
      : alpha_(alpha), N_(N), a_(std::log(r_lo)), b_(std::log(r_hi)) {
    if (!(r_lo > 0.0) || !(r_hi > r_lo) || nodes < 8) throw ConfigError("bad radial table range");
    step_ = (b_ - a_) / (nodes - 1);
    logg_.resize(nodes);
    for (int i = 0; i < nodes; ++i) logg_[i] = std::log(bessel_kernel(alpha, std::exp(a_ + i * step_), N).value);
  }

  double operator()(double r) const {
    if (r <= 0.0) return bessel_kernel(alpha_, r, N_).value;
    const double s = std::log(r);
    if (s < a_) return bessel_kernel(alpha_, r, N_).value;
    if (s >= b_) return 0.0;
    const double u = (s - a_) / step_;
    const int n = static_cast<int>(logg_.size());
    const int i = std::clamp(static_cast<int>(u), 1, n - 3);
    const double x = u - i;
    const double p0 = logg_[i - 1], p1 = logg_[i], p2 = logg_[i + 1], p3 = logg_[i + 2];
    // cubic Lagrange through the four surrounding nodes
    const double v = p1 + x * (-(p0 / 3.0) - p1 / 2.0 + p2 - p3 / 6.0) + x * x * ((p0 + p2) / 2.0 - p1) +
                     x * x * x * (-(p0 / 6.0) + p1 / 2.0 - p2 / 2.0 + p3 / 6.0);
    return std::exp(v);
  }

  double alpha() const { return alpha_; }
  int dim() const { return N_; }

 private:
  double alpha_;
  int N_;
  double a_, b_, step_ = 0.0;
  std::vector<double> logg_;
};

/// Cell integrals of G_alpha over a uniform grid, indexed by the absolute
/// offset (in cells) between source and target. Offsets within `near` cells
/// (Chebyshev) use the exact box integral, the rest the midpoint value.
class BesselKernelTable {
 public:
  BesselKernelTable(double alpha, const Grid& grid, int near = 4) : alpha_(alpha), N_(grid.dim()) {
    detail::check_bessel(alpha, N_);
    for (int i = 0; i < kMaxDim; ++i) {
      n_[i] = grid.cells(i);
      h_[i] = i < N_ ? grid.h(i) : 0.0;
    }
    double hmin = grid.h_min();
    const RadialBesselTable radial(alpha, N_, 0.5 * hmin, std::max(60.0, 2.0 * grid.domain().diameter()));
    const double vol = grid.cell_volume();
    values_.resize(static_cast<std::size_t>(n_[0]) * n_[1] * n_[2]);
    for (int a = 0; a < n_[0]; ++a)
      for (int b = 0; b < n_[1]; ++b)
        for (int c = 0; c < n_[2]; ++c) {
          const int off[3] = {a, b, c};
          const int cheb = std::max({a, b, c});
          double v;
          if (cheb <= near) {
            Point lo{}, hi{};
            for (int i = 0; i < N_; ++i) {
              lo[i] = (off[i] - 0.5) * h_[i];
              hi[i] = (off[i] + 0.5) * h_[i];
            }
            v = bessel_box_integral(alpha, N_, lo, hi);
          } else {
            double r2 = 0.0;
            for (int i = 0; i < N_; ++i) r2 += std::pow(off[i] * h_[i], 2);
            v = radial(std::sqrt(r2)) * vol;
          }
          values_[index(a, b, c)] = v;
        }
  }

  double at(int da, int db, int dc) const { return values_[index(std::abs(da), std::abs(db), std::abs(dc))]; }
  double alpha() const { return alpha_; }

 private:
  std::size_t index(int a, int b, int c) const { return (static_cast<std::size_t>(a) * n_[1] + b) * n_[2] + c; }

  double alpha_;
  int N_;
  int n_[3] = {1, 1, 1};
  double h_[3] = {0, 0, 0};
  std::vector<double> values_;
};

/// (G_alpha * g)(x_j) at every cell centre of g's grid, with g piecewise constant
/// on cells and zero outside the box.
inline GridField bessel_convolve(const GridField& g, const BesselKernelTable& table) {
  if (!g.space_only) throw PreconditionError("bessel_convolve needs a space field");
  for (double v : g.values)
    if (v < 0.0) throw PreconditionError("bessel_convolve needs a nonnegative field");
  const Grid& grid = g.grid;
  GridField out = GridField::space(grid);
  const std::size_t S = grid.space_cells();
  std::vector<CellIndex> idx(S);
  for (std::size_t s = 0; s < S; ++s) idx[s] = grid.multi(s);
  for (std::size_t src = 0; src < S; ++src) {
    const double w = g.values[src];
    if (w == 0.0) continue;
    const CellIndex& cs = idx[src];
    for (std::size_t dst = 0; dst < S; ++dst) {
      const CellIndex& cd = idx[dst];
      out.values[dst] += w * table.at(cd[0] - cs[0], cd[1] - cs[1], cd[2] - cs[2]);
    }
  }
  return out;
}

inline GridField bessel_convolve(const GridField& g, double alpha) {
  return bessel_convolve(g, BesselKernelTable(alpha, g.grid));
}

}  // namespace dplab
