#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dplab/measure.hpp"

using namespace dplab;

namespace {

RadonMeasure unit_density_square(int n) {
  const Grid g(BoxDomain::cube(2, 0.0, 1.0, 1.0), GridSpec::uniform(2, n, 1));
  RadonMeasure nu = RadonMeasure::space(2);
  nu.set_density(GridField::space(g, 1.0));
  return nu;
}

}  // namespace

TEST(BoxDomain, RejectsDegenerateBoxes) {
  EXPECT_THROW(BoxDomain::cube(2, 1.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(BoxDomain::cube(2, 0.0, 1.0, 0.0), DomainError);
  EXPECT_THROW(BoxDomain::cube(4, 0.0, 1.0, 1.0), DomainError);
  const auto d = BoxDomain::cube(2, 0.0, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(d.diameter(), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(d.volume(), 1.0);
}

TEST(Grid, IndexingRoundTrips) {
  const Grid g(BoxDomain::cube(3, -1.0, 1.0, 1.0), GridSpec{{4, 5, 6}, 7});
  EXPECT_EQ(g.space_cells(), 120u);
  for (std::size_t s = 0; s < g.space_cells(); ++s) EXPECT_EQ(g.linear(g.multi(s)), s);
  EXPECT_DOUBLE_EQ(g.cell_measure(), 0.5 * 0.4 * (2.0 / 6.0) / 7.0);
  EXPECT_EQ(g.slab_of(g.dt()), 0);
  EXPECT_EQ(g.slab_of(g.dt() * 1.5), 1);
  EXPECT_EQ(g.slab_of(1.0), 6);
}

TEST(MeasureOfBall, AtomInsideAndOutside) {
  const auto nu = RadonMeasure::unit_atom(2, {0.0, 0.0, 0.0});
  EXPECT_EQ(measure_of_ball(nu, {0.0, 0.0, 0.0}, 0.1), 1.0);
  EXPECT_EQ(measure_of_ball(nu, {1.0, 0.0, 0.0}, 0.5), 0.0);
  // boundary of the open ball excludes the atom
  EXPECT_EQ(measure_of_ball(nu, {1.0, 0.0, 0.0}, 1.0), 0.0);
  EXPECT_THROW(measure_of_ball(nu, {0.0, 0.0, 0.0}, 0.0), DomainError);
}

TEST(MeasureOfBall, DiscAreaFromUnitDensity) {
  const double exact = std::numbers::pi * 0.25 * 0.25;
  const auto nu = unit_density_square(128);
  const double cc = measure_of_ball(nu, {0.5, 0.5, 0.0}, 0.25);
  const double fr = measure_of_ball(nu, {0.5, 0.5, 0.0}, 0.25, BallRule::fractional);
  EXPECT_NEAR(cc, exact, 0.02 * exact);
  EXPECT_NEAR(fr, exact, 0.002 * exact);
}

TEST(MeasureOfBall, NondecreasingInRadius) {
  auto nu = unit_density_square(32);
  nu.add_atom({0.3, 0.3, 0.0}, 0.0, -2.0);
  for (auto rule : {BallRule::cell_center, BallRule::fractional}) {
    double prev = 0.0;
    for (double r = 0.01; r < 1.0; r += 0.013) {
      const double m = measure_of_ball(nu, {0.41, 0.37, 0.0}, r, rule);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}

TEST(MeasureOfCylinder, DiracContainment) {
  RadonMeasure mu = RadonMeasure::spacetime(2);
  mu.add_atom({0.0, 0.0, 0.0}, 0.0, 1.0);
  EXPECT_EQ(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, 0.6), 1.0);
  EXPECT_EQ(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, 0.4), 0.0);
  EXPECT_EQ(measure_of_cylinder(RadonMeasure::spacetime(2), {0.0, 0.0, 0.0}, 0.25, 0.4), 0.0);
  EXPECT_THROW(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, 0.4, 0.0), DomainError);
  EXPECT_THROW(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, -1.0), DomainError);
}

TEST(MeasureOfCylinder, InitialTraceAndProducts) {
  const auto sigma = RadonMeasure::unit_atom(2, {0.0, 0.0, 0.0});
  const auto mu = RadonMeasure::initial_trace(sigma);
  EXPECT_EQ(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, 0.6), 1.0);
  EXPECT_EQ(measure_of_cylinder(mu, {0.0, 0.0, 0.0}, 0.25, 0.4), 0.0);

  RadonMeasure prod = RadonMeasure::spacetime(2);
  prod.add_product(sigma, {1.0, 1.0, 1.0, 1.0}, 1.0);
  EXPECT_DOUBLE_EQ(total_mass(prod), 1.0);
  // window (0.4, 0.6) covers the time cells (0.25,0.5) and (0.5,0.75) by centre
  EXPECT_DOUBLE_EQ(measure_of_cylinder(prod, {0.0, 0.0, 0.0}, 0.5, 0.1, 1.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(measure_of_cylinder(prod, {0.0, 0.0, 0.0}, 0.5, 0.5, 1.0, 2.0), 0.5);
  EXPECT_NEAR(measure_of_cylinder(prod, {0.0, 0.0, 0.0}, 0.5, std::sqrt(0.1), 1.0, 2.0, BallRule::fractional), 0.2,
              1e-12);
}

TEST(MeasureOfCylinder, NondecreasingInTau) {
  const Grid g(BoxDomain::cube(1, 0.0, 1.0, 1.0), GridSpec::uniform(1, 20, 20));
  RadonMeasure mu = RadonMeasure::spacetime(1);
  GridField f = GridField::spacetime(g);
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = std::sin(0.37 * i);
  mu.set_density(f);
  mu.add_atom({0.5, 0.0, 0.0}, 0.5, 3.0);
  for (auto rule : {BallRule::cell_center, BallRule::fractional}) {
    double prev = 0.0;
    for (double tau = 0.01; tau < 10.0; tau *= 1.3) {
      const double m = measure_of_cylinder(mu, {0.52, 0.0, 0.0}, 0.47, 0.3, tau, 3.0, rule);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}

TEST(Jordan, SplitsAtomsAndDensities) {
  RadonMeasure mu = RadonMeasure::space(2);
  mu.add_atom({0.1, 0.2, 0.0}, 2.0);
  mu.add_atom({0.7, 0.2, 0.0}, -3.0);
  const auto [pos, neg] = jordan_decompose(mu);
  ASSERT_EQ(pos.atoms().size(), 1u);
  ASSERT_EQ(neg.atoms().size(), 1u);
  EXPECT_EQ(pos.atoms()[0].mass, 2.0);
  EXPECT_EQ(neg.atoms()[0].x[0], 0.7);
  EXPECT_EQ(neg.atoms()[0].mass, 3.0);

  const auto [zp, zn] = jordan_decompose(RadonMeasure::space(2));
  EXPECT_TRUE(zp.empty());
  EXPECT_TRUE(zn.empty());

  const Grid g(BoxDomain::cube(1, 0.0, 1.0, 1.0), GridSpec::uniform(1, 8, 1));
  GridField f = GridField::space(g);
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = (i % 2 ? -1.0 : 1.0) * (i + 0.5);
  RadonMeasure d = RadonMeasure::space(1);
  d.set_density(f);
  const auto [dp, dn] = jordan_decompose(d);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(dp.density()->values[i], std::max(f.values[i], 0.0));
    EXPECT_EQ(dn.density()->values[i], std::max(-f.values[i], 0.0));
  }
}

TEST(Jordan, TotalVariationAdditive) {
  const Grid g(BoxDomain::cube(2, 0.0, 1.0, 1.0), GridSpec::uniform(2, 6, 4));
  RadonMeasure mu = RadonMeasure::spacetime(2);
  GridField f = GridField::spacetime(g);
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = std::cos(1.3 * i);
  mu.set_density(f);
  mu.add_atom({0.2, 0.2, 0.0}, 0.3, -1.5);
  mu.add_atom({0.4, 0.2, 0.0}, 0.6, 0.25);
  RadonMeasure omega = RadonMeasure::space(2);
  omega.add_atom({0.5, 0.5, 0.0}, 1.0);
  omega.add_atom({0.6, 0.5, 0.0}, -0.5);
  mu.add_product(omega, {1.0, -2.0, 0.5}, 1.0);
  RadonMeasure sigma = RadonMeasure::space(2);
  sigma.add_atom({0.1, 0.9, 0.0}, -0.75);
  mu.set_initial(sigma);

  const auto [pos, neg] = jordan_decompose(mu);
  EXPECT_NEAR(total_variation(pos) + total_variation(neg), total_variation(mu), 1e-12);
  EXPECT_NEAR(total_mass(pos) - total_mass(neg), total_mass(mu), 1e-12);
  EXPECT_NEAR(total_mass(pos), total_variation(pos), 1e-12);
  EXPECT_NEAR(total_variation(abs_measure(mu)), total_variation(mu), 1e-12);
}

TEST(Mollify, PreservesMassOfInteriorAtom) {
  const Grid g(BoxDomain::cube(2, 0.0, 1.0, 1.0), GridSpec::uniform(2, 64, 1));
  const auto nu = RadonMeasure::unit_atom(2, {0.43, 0.51, 0.0});
  const GridField f = mollify(nu, 0.1, g);
  EXPECT_NEAR(f.integral(), 1.0, 1e-6);
  for (double v : f.values) EXPECT_GE(v, 0.0);
}

TEST(Mollify, ZeroAndTwoDisjointBumps) {
  const Grid g(BoxDomain::cube(1, 0.0, 1.0, 1.0), GridSpec::uniform(1, 200, 1));
  const GridField z = mollify(RadonMeasure::space(1), 0.05, g);
  for (double v : z.values) EXPECT_EQ(v, 0.0);

  RadonMeasure nu = RadonMeasure::space(1);
  nu.add_atom({0.3, 0.0, 0.0}, 1.0);
  nu.add_atom({0.6, 0.0, 0.0}, 1.0);
  const GridField f = mollify(nu, 0.1, g);
  double left = 0.0, right = 0.0;
  bool gap = false;
  for (std::size_t s = 0; s < f.size(); ++s) {
    const double x = g.center(s)[0];
    (x < 0.45 ? left : right) += f.values[s] * g.cell_volume();
    if (std::abs(x - 0.45) < 0.04 && f.values[s] == 0.0) gap = true;
  }
  EXPECT_NEAR(left, 1.0, 1e-9);
  EXPECT_NEAR(right, 1.0, 1e-9);
  EXPECT_TRUE(gap);
}

TEST(Mollify, ResolutionError) {
  const Grid g(BoxDomain::cube(1, 0.0, 1.0, 1.0), GridSpec::uniform(1, 10, 1));
  EXPECT_THROW(mollify(RadonMeasure::unit_atom(1, {0.5, 0, 0}), 0.05, g), ResolutionError);
  EXPECT_THROW(mollify(RadonMeasure::unit_atom(1, {0.5, 0, 0}), 0.0, g), DomainError);
}

TEST(Mollify, SpaceTimeSlabsAndInitialTrace) {
  const Grid g(BoxDomain::cube(1, 0.0, 1.0, 1.0), GridSpec::uniform(1, 50, 10));
  RadonMeasure mu = RadonMeasure::spacetime(1);
  mu.add_atom({0.5, 0.0, 0.0}, 0.55, 2.0);
  mu.set_initial(RadonMeasure::unit_atom(1, {0.3, 0.0, 0.0}));
  const GridField f = mollify(mu, 0.1, g);
  EXPECT_NEAR(f.integral(), 3.0, 1e-9);
  double slab5 = 0.0, slab0 = 0.0;
  for (std::size_t s = 0; s < g.space_cells(); ++s) {
    slab5 += f.at(5, s) * g.cell_measure();
    slab0 += f.at(0, s) * g.cell_measure();
  }
  EXPECT_NEAR(slab5, 2.0, 1e-9);
  EXPECT_NEAR(slab0, 1.0, 1e-9);
}

TEST(Truncate, ValuesAndSymmetry) {
  EXPECT_EQ(truncate(5, 2), 2);
  EXPECT_EQ(truncate(-1, 2), -1);
  EXPECT_EQ(truncate(-7, 3), -3);
  EXPECT_THROW(truncate(1, 0), DomainError);
  for (double s = -5; s <= 5; s += 0.37) {
    EXPECT_EQ(truncate(-s, 1.5), -truncate(s, 1.5));
    EXPECT_LE(std::abs(truncate(s + 0.1, 1.5) - truncate(s, 1.5)), 0.1 + 1e-15);
  }
}

TEST(RegularizedDiffusivity, ClipValues) {
  EXPECT_DOUBLE_EQ(regularized_diffusivity(3, 2, 10), 6.0);
  EXPECT_DOUBLE_EQ(regularized_diffusivity(0, 2, 10), 0.2);
  EXPECT_DOUBLE_EQ(regularized_diffusivity(100, 2, 10), 20.0);
}

TEST(RegularizedDiffusivity, BoundsAndConvergence) {
  for (double m : {0.5, 0.8, 1.0, 2.0, 3.0}) {
    for (double n : {1.0, 5.0, 100.0}) {
      const double lo = m * std::pow(std::min(n, 1 / n), m - 1), hi = m * std::pow(std::max(n, 1 / n), m - 1);
      for (double s = -200; s <= 200; s += 0.731) {
        const double a = regularized_diffusivity(s, m, n);
        EXPECT_GE(a, std::min(lo, hi) * (1 - 1e-14));
        EXPECT_LE(a, std::max(lo, hi) * (1 + 1e-14));
        EXPECT_GT(a, 0.0);
      }
    }
    const double s = 0.013;
    double prev_err = INFINITY;
    for (double n : {2.0, 10.0, 50.0, 100.0}) {
      const double err = std::abs(regularized_diffusivity(s, m, n) - m * std::pow(s, m - 1));
      EXPECT_LE(err, prev_err);
      prev_err = err;
    }
    EXPECT_NEAR(prev_err, 0.0, 1e-12);
  }
}
