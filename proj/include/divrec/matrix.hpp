#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace divrec {

// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// y += a * x
inline void axpy(double a, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// y = W x, W is m x n
inline void matvec(const Matrix& w, const double* x, double* y) {
  for (int r = 0; r < w.rows; ++r) y[r] = dot(w.row(r), x, w.cols);
}

// y = W^T x, W is m x n, x has m entries, y has n
inline void matTvec(const Matrix& w, const double* x, double* y) {
  std::fill(y, y + w.cols, 0.0);
  for (int r = 0; r < w.rows; ++r) axpy(x[r], w.row(r), y, w.cols);
}

}  // namespace divrec
