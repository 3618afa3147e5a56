#include <gtest/gtest.h>

#include <cmath>

#include "dplab/plap_solver.hpp"

using namespace dplab;

namespace {

RadonMeasure gaussian_sigma(const Grid& g, const Point& c, double w, double amp = 1.0) {
  GridField f = GridField::space(g);
  for (std::size_t s = 0; s < f.size(); ++s) {
    const double r = distance(g.center(s), c, g.dim());
    f.values[s] = amp * std::exp(-r * r / (w * w));
  }
  RadonMeasure m = RadonMeasure::space(g.dim());
  m.set_density(f);
  return m;
}

/// Explicit Euler for the heat equation on the same cells, zero on the walls.
std::vector<double> explicit_heat(const Grid& g, std::vector<double> u, double t_end) {
  const int nx = g.cells(0), ny = g.cells(1);
  const double hx = g.h(0), hy = g.h(1);
  const int steps = static_cast<int>(std::ceil(t_end / (0.2 * std::min(hx * hx, hy * hy))));
  const double tau = t_end / steps;
  std::vector<double> next(u.size());
  for (int n = 0; n < steps; ++n) {
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) {
        auto v = [&](int a, int b) { return u[static_cast<std::size_t>(a) * ny + b]; };
        const double c = v(i, j);
        const double l = i > 0 ? v(i - 1, j) : -c, r = i < nx - 1 ? v(i + 1, j) : -c;
        const double d = j > 0 ? v(i, j - 1) : -c, t = j < ny - 1 ? v(i, j + 1) : -c;
        next[static_cast<std::size_t>(i) * ny + j] = c + tau * ((l - 2 * c + r) / (hx * hx) + (d - 2 * c + t) / (hy * hy));
      }
    u.swap(next);
  }
  return u;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0, sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

PLapConfig small_config(double p, double q = 0.0) {
  PLapConfig c;
  c.p = p;
  c.q = q;
  c.domain = BoxDomain::cube(2, -1.0, 1.0, 0.1);
  c.grid = GridSpec::uniform(2, 32, 20);
  return c;
}

}  // namespace

TEST(PLapConfig, Validation) {
  EXPECT_NO_THROW(small_config(3.0).validate());
  EXPECT_THROW(small_config(2.0).validate(), HypothesisError);
  EXPECT_THROW(small_config(3.0, 1.5).validate(), HypothesisError);
  PLapConfig c = small_config(3.0);
  c.eps = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SolvePLap, ZeroDataStaysZero) {
  const auto r = solve_plap(small_config(3.0, 2.5), RadonMeasure::spacetime(2), RadonMeasure::space(2));
  ASSERT_FALSE(r.failed);
  for (double v : r.u.values) EXPECT_EQ(v, 0.0);
}

TEST(SolvePLap, HeatLimit) {
  PLapConfig c;
  c.p = 2.0 + 1e-6;
  c.domain = BoxDomain::cube(2, 0.0, 1.0, 0.02);
  c.grid = GridSpec::uniform(2, 48, 80);
  const Grid g = c.make_grid();
  const auto r = solve_plap(c, RadonMeasure::spacetime(2), gaussian_sigma(g, {0.5, 0.45, 0}, 0.12));
  ASSERT_FALSE(r.failed);
  const int half = g.time_steps() / 2 - 1;
  const auto ref = explicit_heat(g, r.u0.values, g.slab_end(half));
  double diff = 0.0, norm = 0.0;
  for (std::size_t s = 0; s < ref.size(); ++s) {
    diff += std::abs(r.u.at(half, s) - ref[s]);
    norm += std::abs(ref[s]);
  }
  EXPECT_LT(diff / norm, 0.03);
}

TEST(SolvePLap, BarenblattDecaySlope) {
  // self-similar exponent N / (N (p - 2) + p) = 2/5 for N = 2, p = 3
  PLapConfig c;
  c.p = 3.0;
  c.domain = BoxDomain::cube(2, -1.0, 1.0, 0.1);
  c.grid = GridSpec::uniform(2, 64, 100);
  const auto r = solve_plap(c, RadonMeasure::spacetime(2), RadonMeasure::unit_atom(2, {0, 0, 0}));
  ASSERT_FALSE(r.failed);
  std::vector<double> lt, lu;
  for (int j = 0; j < r.grid().time_steps(); ++j) {
    const double t = r.grid().slab_end(j);
    if (t < 0.01 - 1e-12) continue;
    lt.push_back(std::log(t));
    lu.push_back(std::log(r.max_abs[j + 1]));
  }
  const double expected = -2.0 / 5.0;
  EXPECT_NEAR(fit_slope(lt, lu), expected, 0.12 * std::abs(expected));
}

TEST(SolvePLap, MassAndAbsorptionBounds) {
  for (double q : {0.0, 2.5, 4.0}) {
    const PLapConfig c = small_config(3.0, q);
    RadonMeasure mu = RadonMeasure::spacetime(2);
    mu.add_atom({0.3, -0.2, 0}, 0.03, 0.7);
    mu.add_atom({-0.4, 0.1, 0}, 0.06, -0.4);
    RadonMeasure sigma = RadonMeasure::space(2);
    sigma.add_atom({0.0, 0.1, 0}, 1.2);
    const auto r = solve_plap(c, mu, sigma);
    ASSERT_FALSE(r.failed) << q;
    EXPECT_LE(r.sup_mass(), r.data_mass() * 1.05) << q;
    EXPECT_LE(r.power_integral, r.data_mass() * 1.05) << q;
  }
}

TEST(SolvePLap, EpsSensitivity) {
  PLapConfig c = small_config(3.0);
  const Grid g = c.make_grid();
  const auto sigma = gaussian_sigma(g, {0.1, -0.1, 0}, 0.3, 2.0);
  c.eps = 1e-6;
  const auto a = solve_plap(c, RadonMeasure::spacetime(2), sigma);
  c.eps = 5e-7;
  const auto b = solve_plap(c, RadonMeasure::spacetime(2), sigma);
  ASSERT_FALSE(a.failed || b.failed);
  EXPECT_NEAR(b.u.abs_integral() / a.u.abs_integral(), 1.0, 0.02);
}

TEST(SolvePLap, PositivityComparisonAndDomination) {
  const PLapConfig c = small_config(3.0, 2.5);
  const double tol = 10 * c.newton_tol + c.grid.time_steps * c.newton_tol;
  RadonMeasure bump = RadonMeasure::spacetime(2);
  bump.add_atom({0.2, 0.2, 0}, 0.02, 1.0);
  const auto zero_mu = RadonMeasure::spacetime(2);
  const auto zero_s = RadonMeasure::space(2);
  const auto cr = plap_comparison_run(c, bump, zero_mu, zero_s, zero_s);
  EXPECT_TRUE(cr.ordered()) << cr.min_gap;
  for (double v : cr.first.u.values) EXPECT_GE(v, -tol);

  const auto same = plap_comparison_run(c, bump, bump, zero_s, zero_s);
  EXPECT_EQ(same.min_gap, 0.0);

  // |u| <= U where U solves with |mu|
  RadonMeasure mu = RadonMeasure::spacetime(2);
  mu.add_atom({0.3, -0.2, 0}, 0.02, 0.8);
  mu.add_atom({-0.3, 0.2, 0}, 0.04, -0.6);
  const auto u = solve_plap(c, mu, zero_s);
  const auto U = solve_plap(c, abs_measure(mu), zero_s);
  ASSERT_FALSE(u.failed || U.failed);
  double worst = INFINITY;
  for (std::size_t i = 0; i < u.u.size(); ++i) worst = std::min(worst, U.u.values[i] - std::abs(u.u.values[i]));
  EXPECT_GE(worst, -tol);
}
