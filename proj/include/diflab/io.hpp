#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "diflab/common.hpp"
#include "diflab/grid.hpp"

// File formats: plain-text PGM images, CSV datasets/samples/traces, and the
// density-grid export. All numeric CSV output uses %.17g so values survive a
// write/reload round trip bit-for-bit.

namespace diflab {

struct Dataset {
  Matrix x;  // d x N observations
  Matrix w;  // p x N covariates (0 x 0 when absent)

  Index dim() const { return x.rows(); }
  Index cov_dim() const { return w.size() == 0 ? 0 : w.rows(); }
  Index size() const { return x.cols(); }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("non-numeric cell '" + s + "' in " + where);
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
    ++pos;
  check(pos == s.size(), "non-numeric cell '" + s + "' in " + where);
  return v;
}

}  // namespace detail

// Plain-text PGM ("P2"): grayscale intensities, row 0 at the top.
inline Matrix read_pgm(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open PGM file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
  }
  check(tokens.size() >= 4, "malformed PGM header: " + path);
  check(tokens[0] == "P2", "unsupported PGM magic (want P2): " + path);
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(tokens[1]);
    h = std::stol(tokens[2]);
    maxval = std::stol(tokens[3]);
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed PGM header: " + path);
  }
  check(w > 0 && h > 0, "malformed PGM dimensions: " + path);
  check(maxval > 0 && maxval <= 65535, "unsupported PGM max value: " + path);
  check(tokens.size() == static_cast<std::size_t>(4 + w * h),
        "PGM pixel count does not match header: " + path);
  Matrix img(h, w);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      long v = 0;
      try {
        v = std::stol(tokens[4 + r * w + c]);
      } catch (const std::exception&) {
        throw std::invalid_argument("malformed PGM pixel: " + path);
      }
      check(v >= 0 && v <= maxval, "PGM pixel out of range: " + path);
      img(r, c) = static_cast<double>(v);
    }
  return img;
}

inline void write_pgm(const std::string& path, const Matrix& img,
                      int maxval = 255) {
  std::ofstream out(path);
  check(out.good(), "cannot write PGM file: " + path);
  out << "P2\n" << img.cols() << " " << img.rows() << "\n" << maxval << "\n";
  for (Index r = 0; r < img.rows(); ++r) {
    for (Index c = 0; c < img.cols(); ++c)
      out << static_cast<long>(img(r, c)) << (c + 1 == img.cols() ? "" : " ");
    out << "\n";
  }
}

// CSV dataset with a header row; columns named "w_*" are covariates, all
// others are observation coordinates, each group in file order.
inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open CSV file: " + path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty CSV file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto names = detail::split_csv_line(line);
  check(!names.empty(), "CSV header has no columns: " + path);
  std::vector<int> x_cols, w_cols;
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (names[c].rfind("w_", 0) == 0)
      w_cols.push_back(static_cast<int>(c));
    else
      x_cols.push_back(static_cast<int>(c));
  }
  check(!x_cols.empty(), "CSV has no observation columns: " + path);

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    check(cells.size() == names.size(),
          "ragged CSV row at line " + std::to_string(lineno) + ": " + path);
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      row[c] = detail::parse_double(
          cells[c], path + " line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }

  Dataset ds;
  Index n = static_cast<Index>(rows.size());
  ds.x.resize(static_cast<Index>(x_cols.size()), n);
  if (!w_cols.empty()) ds.w.resize(static_cast<Index>(w_cols.size()), n);
  for (Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      ds.x(static_cast<Index>(j), i) = rows[i][x_cols[j]];
    for (std::size_t j = 0; j < w_cols.size(); ++j)
      ds.w(static_cast<Index>(j), i) = rows[i][w_cols[j]];
  }
  return ds;
}

inline void save_csv_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  check(out.good(), "cannot write CSV file: " + path);
  for (Index j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << "x" << j;
  for (Index j = 0; j < ds.cov_dim(); ++j) out << ",w_" << j;
  out << "\n";
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.dim(); ++j)
      out << (j ? "," : "") << detail::format_double(ds.x(j, i));
    for (Index j = 0; j < ds.cov_dim(); ++j)
      out << "," << detail::format_double(ds.w(j, i));
    out << "\n";
  }
}

// Sample export: columns x0..x{d-1} plus u_layer<l> columns when paths are
// recorded. n = 0 yields a header-only file.
inline void write_samples_csv(const std::string& path, const Matrix& x,
                              const std::vector<std::vector<int>>* paths =
                                  nullptr) {
  std::ofstream out(path);
  check(out.good(), "cannot write CSV file: " + path);
  for (Index j = 0; j < x.rows(); ++j) out << (j ? "," : "") << "x" << j;
  if (paths != nullptr)
    for (std::size_t l = 0; l < paths->size(); ++l) out << ",u_layer" << l;
  out << "\n";
  for (Index i = 0; i < x.cols(); ++i) {
    for (Index j = 0; j < x.rows(); ++j)
      out << (j ? "," : "") << detail::format_double(x(j, i));
    if (paths != nullptr)
      for (const auto& layer : *paths) out << "," << layer[i];
    out << "\n";
  }
}

// Density grid export: leading '#' comment with the axis specs, then one row
// per grid point (coordinates and density, value-order matching the grid).
inline void write_density_grid_csv(const std::string& path,
                                   const DensityGrid& grid) {
  std::ofstream out(path);
  check(out.good(), "cannot write CSV file: " + path);
  out << "#";
  for (std::size_t j = 0; j < grid.axes.size(); ++j)
    out << " axis" << j << " " << detail::format_double(grid.axes[j].lo) << " "
        << detail::format_double(grid.axes[j].hi) << " " << grid.axes[j].n;
  out << "\n";
  for (Index j = 0; j < grid.dim(); ++j) out << "x" << j << ",";
  out << "density\n";
  Matrix pts = grid.points();
  for (Index c = 0; c < pts.cols(); ++c) {
    for (Index j = 0; j < pts.rows(); ++j)
      out << detail::format_double(pts(j, c)) << ",";
    out << detail::format_double(grid.values[c]) << "\n";
  }
}

}  // namespace diflab
