#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dplab/io.hpp"

using namespace dplab;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "dplab_test_io";
  fs::create_directories(d);
  return d / name;
}
}  // namespace

TEST(RawGrid, HeaderLayout) {
  RawGrid g{{2, 3}, {1, 2, 3, 4, 5, 6}};
  std::stringstream ss;
  write_raw_grid(ss, g);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 32u + 6 * 8);
  EXPECT_EQ(bytes.substr(0, 8), "DPLGRID1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // rank, little endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);
  const RawGrid back = read_raw_grid(ss);
  EXPECT_EQ(back.extents, g.extents);
  EXPECT_EQ(back.values, g.values);
}

TEST(RawGrid, RejectsBadMagic) {
  std::stringstream ss(std::string(40, 'x'));
  EXPECT_THROW(read_raw_grid(ss), ConfigError);
}

TEST(RawGrid, FieldRoundTrip) {
  const Grid g(BoxDomain::cube(2, 0.0, 1.0, 1.0), GridSpec{{3, 4, 1}, 5});
  GridField f = GridField::spacetime(g);
  for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = 0.5 * i - 3.0;
  const auto p = scratch("f.grid");
  save_grid_file(p, f);
  const GridField back = from_raw(load_raw_grid_file(p), g);
  EXPECT_FALSE(back.space_only);
  EXPECT_EQ(back.values, f.values);
  const GridField sp = from_raw(to_raw(f.slice(2)), g);
  EXPECT_TRUE(sp.space_only);
  EXPECT_EQ(sp.values, f.slice(2).values);
}

TEST(MeasureFile, AtomsProductsInitialAndDensity) {
  const Grid g(BoxDomain::cube(2, 0.0, 1.0, 1.0), GridSpec::uniform(2, 4, 2));
  GridField f = GridField::spacetime(g, 2.0);
  save_grid_file(scratch("dens.grid"), f);
  const Json j = Json::parse(R"({
    "ambient": "space-time",
    "domain": {"lower": [0, 0], "upper": [1, 1], "T": 1},
    "cells": [4, 4], "time_steps": 2,
    "atoms": [{"x": [0.5, 0.5], "t": 0.25, "mass": -1.5}],
    "density": "dens.grid",
    "product": {"omega": {"atoms": [{"x": [0.2, 0.2], "mass": 1}]}, "F": [1, 3]},
    "initial": {"atoms": [{"x": [0.7, 0.1], "mass": 0.5}]}
  })");
  const RadonMeasure mu = measure_from_json(j, scratch("").parent_path());
  EXPECT_FALSE(mu.is_space());
  ASSERT_EQ(mu.atoms().size(), 1u);
  EXPECT_EQ(mu.atoms()[0].t, 0.25);
  ASSERT_TRUE(mu.density());
  ASSERT_EQ(mu.products().size(), 1u);
  EXPECT_DOUBLE_EQ(mu.products()[0].horizon, 1.0);
  ASSERT_TRUE(mu.initial());
  EXPECT_NEAR(total_mass(mu), -1.5 + 2.0 + 2.0 + 0.5, 1e-12);
}

TEST(MeasureFile, UnknownKeyAndMissingFile) {
  EXPECT_THROW(measure_from_json(Json::parse(R"({"dim": 2, "atomz": []})")), ConfigError);
  EXPECT_THROW(load_measure_file(scratch("does_not_exist.json")), ConfigError);
  EXPECT_THROW(measure_from_json(Json::parse(R"({"ambient": "time"})")), ConfigError);
}

TEST(MeasureFile, JsonRoundTrip) {
  RadonMeasure mu = RadonMeasure::spacetime(2);
  mu.add_atom({0.1, 0.2, 0.0}, 0.3, 4.0);
  mu.add_product(RadonMeasure::unit_atom(2, {0.5, 0.5, 0.0}), {1.0, 2.0}, 1.0);
  mu.set_initial(RadonMeasure::unit_atom(2, {0.3, 0.3, 0.0}));
  const RadonMeasure back = measure_from_json(measure_to_json(mu));
  EXPECT_EQ(measure_to_json(back), measure_to_json(mu));
}
