#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dplab/core.hpp"

namespace dplab {

/// Axis-aligned spatial box (lower, upper) together with a time horizon T.
class BoxDomain {
 public:
  BoxDomain() = default;

  BoxDomain(int dim, Point lower, Point upper, double T) : dim_(dim), lower_(lower), upper_(upper), T_(T) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("spatial dimension must be 1, 2 or 3");
    for (int i = 0; i < dim; ++i)
      if (!(upper[i] > lower[i])) throw DomainError("box upper corner must exceed lower corner on every axis");
    for (int i = dim; i < kMaxDim; ++i) lower_[i] = upper_[i] = 0.0;
    if (!(T > 0.0)) throw DomainError("time horizon T must be positive");
  }

  /// Cube [lo, hi]^dim.
  static BoxDomain cube(int dim, double lo, double hi, double T) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("spatial dimension must be 1, 2 or 3");
    Point a{}, b{};
    for (int i = 0; i < dim; ++i) {
      a[i] = lo;
      b[i] = hi;
    }
    return BoxDomain(dim, a, b, T);
  }

  int dim() const { return dim_; }
  const Point& lower() const { return lower_; }
  const Point& upper() const { return upper_; }
  double T() const { return T_; }
  double extent(int axis) const { return upper_[axis] - lower_[axis]; }

  double diameter() const {
    double s = 0.0;
    for (int i = 0; i < dim_; ++i) s += extent(i) * extent(i);
    return std::sqrt(s);
  }

  double volume() const {
    double v = 1.0;
    for (int i = 0; i < dim_; ++i) v *= extent(i);
    return v;
  }

  bool contains(const Point& x) const {
    for (int i = 0; i < dim_; ++i)
      if (x[i] < lower_[i] || x[i] > upper_[i]) return false;
    return true;
  }

  /// Distance from an interior point to the boundary of the box.
  double distance_to_boundary(const Point& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dim_; ++i) d = std::min({d, x[i] - lower_[i], upper_[i] - x[i]});
    return d;
  }

  Point center() const {
    Point c{};
    for (int i = 0; i < dim_; ++i) c[i] = 0.5 * (lower_[i] + upper_[i]);
    return c;
  }

  bool operator==(const BoxDomain&) const = default;

 private:
  int dim_ = 1;
  Point lower_{};
  Point upper_{1.0, 0.0, 0.0};
  double T_ = 1.0;
};

struct GridSpec {
  std::array<int, 3> cells{1, 1, 1};
  int time_steps = 1;

  static GridSpec uniform(int dim, int n, int time_steps) {
    GridSpec g;
    for (int i = 0; i < dim; ++i) g.cells[i] = n;
    g.time_steps = time_steps;
    return g;
  }

  /// Both space and time resolution doubled.
  GridSpec refined() const {
    GridSpec g = *this;
    for (auto& c : g.cells)
      if (c > 1) c *= 2;
    g.time_steps *= 2;
    return g;
  }

  bool operator==(const GridSpec&) const = default;
};

/// Multi-index of a spatial cell.
using CellIndex = std::array<int, 3>;

/// Uniform cell-centred discretisation of a BoxDomain x (0, T).
class Grid {
 public:
  Grid() = default;

  Grid(BoxDomain domain, GridSpec spec) : domain_(std::move(domain)), spec_(spec) {
    for (int i = domain_.dim(); i < kMaxDim; ++i) spec_.cells[i] = 1;
    for (int i = 0; i < domain_.dim(); ++i)
      if (spec_.cells[i] < 1) throw DomainError("cells_per_axis must be positive");
    if (spec_.time_steps < 1) throw DomainError("time_steps must be positive");
  }

  const BoxDomain& domain() const { return domain_; }
  const GridSpec& spec() const { return spec_; }
  int dim() const { return domain_.dim(); }
  int cells(int axis) const { return spec_.cells[axis]; }
  int time_steps() const { return spec_.time_steps; }

  double h(int axis) const { return domain_.extent(axis) / spec_.cells[axis]; }
  double h_max() const {
    double m = 0.0;
    for (int i = 0; i < dim(); ++i) m = std::max(m, h(i));
    return m;
  }
  double h_min() const {
    double m = h(0);
    for (int i = 1; i < dim(); ++i) m = std::min(m, h(i));
    return m;
  }
  double dt() const { return domain_.T() / spec_.time_steps; }

  double cell_volume() const {
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= h(i);
    return v;
  }
  /// Space-time cell measure h^N * dt.
  double cell_measure() const { return cell_volume() * dt(); }

  std::size_t space_cells() const {
    return static_cast<std::size_t>(spec_.cells[0]) * spec_.cells[1] * spec_.cells[2];
  }
  std::size_t spacetime_cells() const { return space_cells() * spec_.time_steps; }

  std::size_t linear(const CellIndex& c) const {
    return (static_cast<std::size_t>(c[0]) * spec_.cells[1] + c[1]) * spec_.cells[2] + c[2];
  }

  CellIndex multi(std::size_t s) const {
    CellIndex c{};
    c[2] = static_cast<int>(s % spec_.cells[2]);
    s /= spec_.cells[2];
    c[1] = static_cast<int>(s % spec_.cells[1]);
    c[0] = static_cast<int>(s / spec_.cells[1]);
    return c;
  }

  bool in_range(const CellIndex& c) const {
    for (int i = 0; i < kMaxDim; ++i)
      if (c[i] < 0 || c[i] >= spec_.cells[i]) return false;
    return true;
  }

  Point center(const CellIndex& c) const {
    Point x{};
    for (int i = 0; i < dim(); ++i) x[i] = domain_.lower()[i] + (c[i] + 0.5) * h(i);
    return x;
  }
  Point center(std::size_t s) const { return center(multi(s)); }

  /// Cell containing x (clamped to the grid).
  CellIndex locate(const Point& x) const {
    CellIndex c{};
    for (int i = 0; i < dim(); ++i) {
      const int k = static_cast<int>(std::floor((x[i] - domain_.lower()[i]) / h(i)));
      c[i] = std::clamp(k, 0, spec_.cells[i] - 1);
    }
    return c;
  }

  /// Time slab j covers (j dt, (j+1) dt]; its midpoint.
  double slab_mid(int j) const { return (j + 0.5) * dt(); }
  double slab_end(int j) const { return (j + 1) * dt(); }
  int slab_of(double t) const {
    if (t <= 0.0) return 0;
    const int j = static_cast<int>(std::ceil(t / dt())) - 1;
    return std::clamp(j, 0, spec_.time_steps - 1);
  }

  bool operator==(const Grid&) const = default;

 private:
  BoxDomain domain_;
  GridSpec spec_;
};

/// Scalar field per spatial cell (space_only) or per space-time cell.
/// Space-time layout: slab-major, value(j, s) = values[j * space_cells + s].
struct GridField {
  Grid grid;
  bool space_only = true;
  std::vector<double> values;

  GridField() = default;
  GridField(Grid g, bool space, double fill = 0.0) : grid(std::move(g)), space_only(space) {
    values.assign(space ? grid.space_cells() : grid.spacetime_cells(), fill);
  }

  static GridField space(const Grid& g, double fill = 0.0) { return GridField(g, true, fill); }
  static GridField spacetime(const Grid& g, double fill = 0.0) { return GridField(g, false, fill); }

  std::size_t size() const { return values.size(); }
  int slabs() const { return space_only ? 1 : grid.time_steps(); }

  double& at(int slab, std::size_t s) { return values[static_cast<std::size_t>(slab) * grid.space_cells() + s]; }
  double at(int slab, std::size_t s) const {
    return values[static_cast<std::size_t>(slab) * grid.space_cells() + s];
  }

  /// Measure attached to one entry: cell volume, or cell volume times dt.
  double cell_measure() const { return space_only ? grid.cell_volume() : grid.cell_measure(); }

  /// Copy of one time slice as a space field.
  GridField slice(int slab) const {
    GridField f = GridField::space(grid);
    const std::size_t S = grid.space_cells();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(slab * S), S, f.values.begin());
    return f;
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  double integral() const { return std::accumulate(values.begin(), values.end(), 0.0) * cell_measure(); }
  double abs_integral() const {
    double s = 0.0;
    for (double v : values) s += std::abs(v);
    return s * cell_measure();
  }
};

}  // namespace dplab
