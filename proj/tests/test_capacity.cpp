#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dplab/capacity.hpp"

using namespace dplab;

namespace {

CompactSet lattice2d(double h) {
  CompactSet k;
  k.space_dim = 2;
  k.h = {h, h, 1, 1};
  return k;
}

CompactSet random_set(std::mt19937& rng, double h, int count) {
  CompactSet k = lattice2d(h);
  std::uniform_int_distribution<int> u(0, 7);
  for (int i = 0; i < count; ++i) k.cells.push_back({u(rng), u(rng), 0, 0});
  k.normalize();
  return k;
}

LatticeBox common_window() {
  LatticeBox w;
  w.lo = {-8, -8, 0, 0};
  w.hi = {16, 16, 1, 1};
  return w;
}

CompactSet spacetime_cube(int m, double coarse) {
  CompactSet k;
  k.space_dim = 2;
  k.spacetime = true;
  const double h = coarse / m;
  k.h = {h, h, h, 1};
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      for (int c = 0; c < m; ++c) k.cells.push_back({a, b, c, 0});
  return k;
}

}  // namespace

TEST(BesselCapacity, EmptySetIsZero) {
  const auto e = bessel_capacity(lattice2d(0.1), 1.0, 2.0);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(e.unknowns, 0u);
}

TEST(BesselCapacity, PreconditionsAndDomain) {
  CompactSet k = lattice2d(0.1);
  k.cells.push_back({0, 0, 0, 0});
  EXPECT_THROW(bessel_capacity(k, 1.0, 1.0), DomainError);
  EXPECT_THROW(bessel_capacity(k, -1.0, 2.0), DomainError);
  EXPECT_THROW(bessel_capacity(k.times_slab(0.1), 1.0, 2.0), PreconditionError);
}

TEST(BesselCapacity, FeasibleWithSmallGap) {
  const auto ball = CompactSet::ball(2, 0.05, {0, 0, 0}, 0.2);
  for (double s : {2.0, 1.5, 3.0}) {
    const auto e = bessel_capacity(ball, 0.8, s);
    EXPECT_TRUE(e.converged) << s;
    EXPECT_GT(e.value, 0.0);
    EXPECT_LE(e.feasibility_residual, 1e-3);
    EXPECT_GE(e.duality_gap, -1e-9 * e.value);
    EXPECT_LE(e.duality_gap, 1e-6 * e.value) << s;
  }
}

TEST(BesselCapacity, MonotoneAndSubadditiveOnTenPairs) {
  std::mt19937 rng(7);
  BesselCapacityOptions opt;
  opt.window = common_window();
  for (int pair = 0; pair < 10; ++pair) {
    const CompactSet a = random_set(rng, 0.1, 3 + pair % 4);
    const CompactSet b = random_set(rng, 0.1, 2 + pair % 3);
    const CompactSet u = set_union(a, b);
    const double ca = bessel_capacity(a, 1.0, 2.0, opt).value;
    const double cb = bessel_capacity(b, 1.0, 2.0, opt).value;
    const double cu = bessel_capacity(u, 1.0, 2.0, opt).value;
    ASSERT_TRUE(a.subset_of(u));
    EXPECT_LE(ca, cu * (1 + 1e-6)) << pair;
    EXPECT_LE(cb, cu * (1 + 1e-6)) << pair;
    EXPECT_LE(cu, (ca + cb) * (1 + 1e-6)) << pair;
  }
  // overlapping pair and a set against itself
  CompactSet a = lattice2d(0.1), b = lattice2d(0.1);
  for (int i = 0; i < 4; ++i) {
    a.cells.push_back({i, 0, 0, 0});
    b.cells.push_back({i + 2, 0, 0, 0});
  }
  const double ca = bessel_capacity(a, 1.0, 2.0, opt).value;
  const double cb = bessel_capacity(b, 1.0, 2.0, opt).value;
  const double cu = bessel_capacity(set_union(a, b), 1.0, 2.0, opt).value;
  EXPECT_LE(cu, (ca + cb) * (1 + 1e-6));
  EXPECT_NEAR(bessel_capacity(set_union(a, a), 1.0, 2.0, opt).value, ca, 1e-9 * ca);
}

TEST(CapacityScaling, VanishingPointCapacity) {
  const std::vector<double> radii{0.05, 0.1, 0.2};
  BesselCapacityOptions opt;
  opt.padding_extent = 8.0;
  const auto f3 = capacity_scaling_exponent(1.0, 2.0, radii, 3, 6, opt);
  EXPECT_NEAR(f3.slope, 1.0, 0.15);
  const auto f2 = capacity_scaling_exponent(0.5, 2.0, radii, 2, 6, opt);
  EXPECT_NEAR(f2.slope, 1.0, 0.15);
}

TEST(CapacityScaling, PositivePointCapacity) {
  BesselCapacityOptions opt;
  opt.padding_extent = 8.0;
  const auto f = capacity_scaling_exponent(2.0, 2.0, {0.05, 0.1, 0.2}, 3, 6, opt);
  EXPECT_NEAR(f.slope, 0.0, 0.15);
  // G_2(0) = 1/(8 pi) in 3D bounds the capacity of any set below by 8 pi
  for (double v : f.values) EXPECT_GT(v, 8 * std::numbers::pi * 0.99);
}

TEST(CapacityScaling, Preconditions) {
  EXPECT_THROW(capacity_scaling_exponent(1.0, 2.0, {0.1}, 3), PreconditionError);
  EXPECT_THROW(capacity_scaling_exponent(1.0, 2.0, {0.05, 0.1, 0.2}, 3, 2), ResolutionError);
}

TEST(ParabolicCapacity, EmptyAndPreconditions) {
  CompactSet k = lattice2d(0.1).times_slab(0.1);
  k.cells.clear();
  EXPECT_EQ(parabolic_capacity(k, 2.0, 2.0).value, 0.0);
  EXPECT_THROW(parabolic_capacity(lattice2d(0.1), 2.0, 2.0), PreconditionError);
  k.cells.push_back({0, 0, 0, 0});
  EXPECT_THROW(parabolic_capacity(k, 1.0, 2.0), DomainError);
}

TEST(ParabolicCapacity, LevelHomogeneity) {
  const CompactSet k = spacetime_cube(1, 0.25);
  for (auto [a, b] : {std::pair{2.0, 2.0}, {2.0, 4.0 / 3.0}, {1.5, 3.0}}) {
    ParabolicCapacityOptions o;
    const auto e1 = parabolic_capacity(k, a, b, o);
    o.level = 2.0;
    const auto e2 = parabolic_capacity(k, a, b, o);
    EXPECT_TRUE(e1.converged);
    EXPECT_LE(e1.feasibility_residual, 1e-3);
    EXPECT_NEAR(e2.value / e1.value, std::pow(2.0, a), 1e-6 * std::pow(2.0, a)) << a << ' ' << b;
  }
}

TEST(ParabolicCapacity, SingleCellDecreasesUnderRefinement) {
  // one space-time cell of side 0.25 in N = 2, fixed physical window [-0.5, 0.75]^3
  std::vector<double> vals;
  for (int lvl = 0; lvl < 3; ++lvl) {
    const int m = 1 << lvl;
    ParabolicCapacityOptions o;
    LatticeBox w;
    for (int i = 0; i < 3; ++i) {
      w.lo[i] = -2 * m;
      w.hi[i] = 3 * m;
    }
    o.window = w;
    const auto e = parabolic_capacity(spacetime_cube(m, 0.25), 2.0, 2.0, o);
    EXPECT_TRUE(e.converged) << lvl;
    EXPECT_LE(e.feasibility_residual, 1e-3);
    vals.push_back(e.value);
  }
  EXPECT_GT(vals[2], 0.0);
  EXPECT_LT(vals[1], vals[0]);
  EXPECT_LT(vals[2], vals[1]);
}

TEST(ParabolicCapacity, AnisotropicVariantTracksSingleExponent) {
  // m = 2, q = 4: exponents (q/(q-m), q') = (2, 4/3) against s = q/(q - max(m,1)) = 2, on E_r x {0}
  const double m = 2.0, q = 4.0;
  const double a = q / (q - m), b = q / (q - 1), s = q / (q - std::max(m, 1.0));
  ParabolicCapacityOptions o;
  LatticeBox w;  // one physical window for every radius
  w.lo = {-9, -9, -4, 0};
  w.hi = {9, 9, 5, 1};
  o.window = w;
  std::vector<double> aniso, single;
  for (double r : {0.3, 0.2, 0.1}) {
    const CompactSet k = CompactSet::ball(2, 0.1, {0, 0, 0}, r, -0.05).times_slab(0.1);
    const auto ea = parabolic_capacity(k, a, b, o), es = parabolic_capacity(k, s, s, o);
    EXPECT_TRUE(ea.converged && es.converged) << r;
    aniso.push_back(ea.value);
    single.push_back(es.value);
  }
  for (std::size_t i = 1; i < aniso.size(); ++i) {
    EXPECT_LT(aniso[i], aniso[i - 1]);
    EXPECT_LT(single[i], single[i - 1]);
  }
  // the ratio stays within a fixed band, so one shrinks exactly when the other does
  double lo = INFINITY, hi = 0.0;
  for (std::size_t i = 0; i < aniso.size(); ++i) {
    lo = std::min(lo, aniso[i] / single[i]);
    hi = std::max(hi, aniso[i] / single[i]);
  }
  EXPECT_LT(hi / lo, 2.0);
}
