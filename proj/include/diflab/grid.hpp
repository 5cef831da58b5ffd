#pragma once

#include <algorithm>
#include <concepts>
#include <type_traits>
#include <vector>

#include "diflab/common.hpp"

// Rectangular evaluation grids with trapezoidal quadrature, the normalization
// oracle used throughout the tests and the payload of density-grid exports.

namespace diflab {

struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  Index n = 2;

  double step() const { return (hi - lo) / static_cast<double>(n - 1); }
  // Trapezoid weight of index i: h at interior points, h/2 at the ends.
  double weight(Index i) const {
    return (i == 0 || i == n - 1) ? 0.5 * step() : step();
  }
};

struct DensityGrid {
  std::vector<GridAxis> axes;
  Vector values;  // row-major: axis 0 slowest

  Index dim() const { return static_cast<Index>(axes.size()); }
  Index num_points() const {
    Index m = 1;
    for (const auto& a : axes) m *= a.n;
    return m;
  }

  // All grid points as a d x M matrix in value order.
  Matrix points() const {
    Index d = dim(), m = num_points();
    Matrix p(d, m);
    std::vector<Index> idx(d, 0);
    for (Index c = 0; c < m; ++c) {
      for (Index j = 0; j < d; ++j)
        p(j, c) = axes[j].lo + static_cast<double>(idx[j]) * axes[j].step();
      for (Index j = d; j-- > 0;) {  // advance mixed-radix counter
        if (++idx[j] < axes[j].n) break;
        idx[j] = 0;
      }
    }
    return p;
  }
};

inline void validate_axes(const std::vector<GridAxis>& axes) {
  check(!axes.empty(), "grid needs at least one axis");
  for (const auto& a : axes) {
    check(a.n >= 2, "grid axis needs at least 2 points");
    check(a.hi > a.lo, "grid axis needs hi > lo");
  }
}

// Trapezoidal integral of tabulated values over the axes' box.
inline double quadrature_integral(const Vector& values,
                                  const std::vector<GridAxis>& axes) {
  validate_axes(axes);
  Index d = static_cast<Index>(axes.size());
  Index m = 1;
  for (const auto& a : axes) m *= a.n;
  check(values.size() == m, "grid value count does not match axes");
  double total = 0.0;
  std::vector<Index> idx(d, 0);
  for (Index c = 0; c < m; ++c) {
    double w = 1.0;
    for (Index j = 0; j < d; ++j) w *= axes[j].weight(idx[j]);
    total += w * values[c];
    for (Index j = d; j-- > 0;) {
      if (++idx[j] < axes[j].n) break;
      idx[j] = 0;
    }
  }
  return total;
}

// Evaluates f (d x M batch -> 1 x M row) over the grid in bounded chunks and
// integrates. Returns the filled grid as well for reuse.
template <class F>
  requires (!std::convertible_to<std::decay_t<F>, Vector>)
DensityGrid evaluate_grid(F&& f, std::vector<GridAxis> axes,
                          Index chunk = 65536) {
  validate_axes(axes);
  DensityGrid grid;
  grid.axes = std::move(axes);
  Matrix pts = grid.points();
  Index m = pts.cols();
  grid.values.resize(m);
  for (Index start = 0; start < m; start += chunk) {
    Index len = std::min(chunk, m - start);
    RowVector vals = f(pts.middleCols(start, len));
    grid.values.segment(start, len) = vals.transpose();
  }
  return grid;
}

template <class F>
  requires (!std::convertible_to<std::decay_t<F>, Vector>)
double quadrature_integral(F&& f, const std::vector<GridAxis>& axes,
                           Index chunk = 65536) {
  DensityGrid g = evaluate_grid(f, axes, chunk);
  return quadrature_integral(g.values, g.axes);
}

}  // namespace diflab
