#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dplab/geometry.hpp"
#include "dplab/measure.hpp"

namespace dplab {

// ---------------------------------------------------------------------------
// DPLGRID1 raw grid format:
//   bytes 0..7   magic "DPLGRID1"
//   bytes 8..11  u32 rank (1..4)
//   bytes 12..27 u32 extents[4], unused entries 1
//   bytes 28..31 u32 reserved (0)
// followed by prod(extents) little-endian f64 values in row-major order
// (last extent fastest). Space-time fields are stored as [time, x0, x1, x2].

struct RawGrid {
  std::vector<std::uint32_t> extents;
  std::vector<double> values;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(const unsigned char* b) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

constexpr char kGridMagic[8] = {'D', 'P', 'L', 'G', 'R', 'I', 'D', '1'};

}  // namespace detail

inline void write_raw_grid(std::ostream& os, const RawGrid& g) {
  if (g.extents.empty() || g.extents.size() > 4) throw ConfigError("grid rank must be 1..4");
  std::size_t n = 1;
  for (auto e : g.extents) n *= e;
  if (n != g.values.size()) throw ConfigError("grid extents do not match value count");
  os.write(detail::kGridMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(g.extents.size()));
  for (std::size_t i = 0; i < 4; ++i) detail::put_u32(os, i < g.extents.size() ? g.extents[i] : 1u);
  detail::put_u32(os, 0u);
  for (double v : g.values) detail::put_f64(os, v);
}

inline RawGrid read_raw_grid(std::istream& is) {
  unsigned char hdr[32];
  if (!is.read(reinterpret_cast<char*>(hdr), 32)) throw ConfigError("grid file shorter than its header");
  if (std::memcmp(hdr, detail::kGridMagic, 8) != 0) throw ConfigError("bad grid magic (expected DPLGRID1)");
  const std::uint32_t rank = detail::get_u32(hdr + 8);
  if (rank < 1 || rank > 4) throw ConfigError("grid rank must be 1..4");
  RawGrid g;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    g.extents.push_back(detail::get_u32(hdr + 12 + 4 * i));
    n *= g.extents.back();
  }
  g.values.resize(n);
  std::vector<unsigned char> buf(8 * n);
  if (n && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw ConfigError("grid file truncated");
  for (std::size_t i = 0; i < n; ++i) g.values[i] = detail::get_f64(buf.data() + 8 * i);
  return g;
}

inline RawGrid to_raw(const GridField& f) {
  RawGrid r;
  if (!f.space_only) r.extents.push_back(static_cast<std::uint32_t>(f.grid.time_steps()));
  for (int i = 0; i < f.grid.dim(); ++i) r.extents.push_back(static_cast<std::uint32_t>(f.grid.cells(i)));
  r.values = f.values;
  return r;
}

/// Interpret raw data on a known grid; the rank decides space vs space-time.
inline GridField from_raw(const RawGrid& r, const Grid& grid) {
  const int dim = grid.dim();
  const bool space = static_cast<int>(r.extents.size()) == dim;
  if (!space && static_cast<int>(r.extents.size()) != dim + 1) throw ConfigError("grid file rank does not match domain");
  const std::size_t off = space ? 0 : 1;
  if (!space && static_cast<int>(r.extents[0]) != grid.time_steps()) throw ConfigError("grid file time extent mismatch");
  for (int i = 0; i < dim; ++i)
    if (static_cast<int>(r.extents[off + i]) != grid.cells(i)) throw ConfigError("grid file spatial extent mismatch");
  GridField f(grid, space);
  f.values = r.values;
  return f;
}

inline void save_grid_file(const std::filesystem::path& p, const GridField& f) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + p.string() + " for writing");
  write_raw_grid(os, to_raw(f));
}

inline RawGrid load_raw_grid_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ConfigError("cannot open grid file " + p.string());
  return read_raw_grid(is);
}

// ---------------------------------------------------------------------------
// JSON helpers shared by measure descriptions and scenarios

using Json = nlohmann::json;

inline Point point_from_json(const Json& j, int dim) {
  Point x{};
  if (!j.is_array() || static_cast<int>(j.size()) != dim)
    throw ConfigError("point must be an array of " + std::to_string(dim) + " numbers");
  for (int i = 0; i < dim; ++i) x[i] = j.at(i).get<double>();
  return x;
}

inline Json point_to_json(const Point& x, int dim) {
  Json a = Json::array();
  for (int i = 0; i < dim; ++i) a.push_back(x[i]);
  return a;
}

inline BoxDomain domain_from_json(const Json& j) {
  const auto lo = j.at("lower").get<std::vector<double>>();
  const auto hi = j.at("upper").get<std::vector<double>>();
  if (lo.size() != hi.size() || lo.empty() || lo.size() > 3) throw ConfigError("domain lower/upper must have 1..3 entries");
  Point a{}, b{};
  for (std::size_t i = 0; i < lo.size(); ++i) {
    a[i] = lo[i];
    b[i] = hi[i];
  }
  return BoxDomain(static_cast<int>(lo.size()), a, b, j.at("T").get<double>());
}

inline Json domain_to_json(const BoxDomain& d) {
  Json lo = Json::array(), hi = Json::array();
  for (int i = 0; i < d.dim(); ++i) {
    lo.push_back(d.lower()[i]);
    hi.push_back(d.upper()[i]);
  }
  return {{"lower", lo}, {"upper", hi}, {"T", d.T()}};
}

// ---------------------------------------------------------------------------
// Measure description file (JSON):
// {
//   "ambient": "space" | "space-time",
//   "dim": N,                                   (optional if atoms or domain give it)
//   "domain": {"lower": [...], "upper": [...], "T": T},   (needed with "density")
//   "cells": [n0, ...], "time_steps": nt,                 (grid of the density file)
//   "atoms": [{"x": [...], "t": t, "mass": m}, ...],
//   "density": "path/to/field.grid",
//   "product": [{"omega": {<space measure>}, "F": [...], "horizon": T}, ...],
//   "initial": {<space measure>}                 (sigma (x) delta_{t=0})
// }
// "product" also accepts a single object. Relative paths resolve against `base`.

inline RadonMeasure measure_from_json(const Json& j, const std::filesystem::path& base = {}, int dim_hint = 0) {
  static const std::vector<std::string> known = {"ambient", "dim", "domain", "cells", "time_steps",
                                                 "atoms", "density", "product", "initial"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown measure key '" + k + "'");

  const std::string amb = j.value("ambient", "space");
  if (amb != "space" && amb != "space-time") throw ConfigError("ambient must be 'space' or 'space-time'");
  const Ambient ambient = amb == "space" ? Ambient::space : Ambient::spacetime;

  int dim = j.value("dim", dim_hint);
  std::optional<BoxDomain> dom;
  if (j.contains("domain")) {
    dom = domain_from_json(j.at("domain"));
    dim = dom->dim();
  }
  if (dim == 0 && j.contains("atoms") && !j.at("atoms").empty()) dim = static_cast<int>(j.at("atoms").at(0).at("x").size());
  if (dim < 1 || dim > 3) throw ConfigError("cannot determine measure dimension");

  RadonMeasure mu(dim, ambient);
  if (j.contains("atoms"))
    for (const auto& a : j.at("atoms")) mu.add_atom(point_from_json(a.at("x"), dim), a.value("t", 0.0), a.at("mass").get<double>());

  if (j.contains("density")) {
    if (!dom) throw ConfigError("measure with a density needs a domain");
    GridSpec spec;
    const auto cells = j.at("cells").get<std::vector<int>>();
    if (static_cast<int>(cells.size()) != dim) throw ConfigError("cells must list one count per axis");
    for (int i = 0; i < dim; ++i) spec.cells[i] = cells[i];
    spec.time_steps = j.value("time_steps", 1);
    const Grid grid(*dom, spec);
    std::filesystem::path p = j.at("density").get<std::string>();
    if (p.is_relative()) p = base / p;
    GridField f = from_raw(load_raw_grid_file(p), grid);
    if (f.space_only != mu.is_space()) throw ConfigError("density file rank does not match the ambient");
    mu.set_density(std::move(f));
  }

  if (j.contains("product")) {
    Json prods = j.at("product");
    if (prods.is_object()) prods = Json::array({prods});
    for (const auto& p : prods) {
      const RadonMeasure omega = measure_from_json(p.at("omega"), base, dim);
      const double horizon = p.contains("horizon") ? p.at("horizon").get<double>() : (dom ? dom->T() : 0.0);
      if (!(horizon > 0.0)) throw ConfigError("product needs a horizon (or a domain)");
      mu.add_product(omega, p.at("F").get<std::vector<double>>(), horizon);
    }
  }
  if (j.contains("initial")) mu.set_initial(measure_from_json(j.at("initial"), base, dim));
  if (dom) mu.check_inside(*dom);
  return mu;
}

inline RadonMeasure load_measure_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open measure file " + p.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("measure file " + p.string() + ": " + e.what());
  }
  return measure_from_json(j, p.parent_path());
}

/// Atom-and-product part of a measure as JSON; densities are written by the caller.
inline Json measure_to_json(const RadonMeasure& mu) {
  Json j;
  j["ambient"] = mu.is_space() ? "space" : "space-time";
  j["dim"] = mu.dim();
  Json atoms = Json::array();
  for (const auto& a : mu.atoms()) {
    Json e{{"x", point_to_json(a.x, mu.dim())}, {"mass", a.mass}};
    if (!mu.is_space()) e["t"] = a.t;
    atoms.push_back(e);
  }
  j["atoms"] = atoms;
  if (!mu.products().empty()) {
    Json prods = Json::array();
    for (const auto& p : mu.products()) prods.push_back({{"omega", measure_to_json(*p.omega)}, {"F", p.F}, {"horizon", p.horizon}});
    j["product"] = prods;
  }
  if (mu.initial()) j["initial"] = measure_to_json(*mu.initial());
  return j;
}

// ---------------------------------------------------------------------------
// Small CSV helpers

inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open " + p.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (numeric && !row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dplab
