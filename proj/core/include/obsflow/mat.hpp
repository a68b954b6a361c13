#pragma once

#include <cstddef>
#include <vector>

#include "obsflow/errors.hpp"

namespace obsflow {

/// Dense row-major f64 matrix. Deliberately minimal: the public API of the
/// library speaks std-only types; heavier linear algebra stays internal.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }

  std::size_t size() const { return rows * cols; }
  bool empty() const { return rows == 0 || cols == 0; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

/// Column-selected sub-matrix.
inline Mat select_cols(const Mat& m, const std::vector<std::size_t>& idx) {
  Mat out(m.rows, idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= m.cols) throw ConfigError("select_cols: index out of range");
    for (std::size_t i = 0; i < m.rows; ++i) out(i, j) = m(i, idx[j]);
  }
  return out;
}

}  // namespace obsflow
