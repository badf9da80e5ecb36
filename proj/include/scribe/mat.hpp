#pragma once

#include <cassert>
#include <cmath>
#include <cstring>
#include <vector>

#include "scribe/rng.hpp"

namespace scribe {

// Dense row-major matrix of doubles. Row and column vectors are 1xN / Nx1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, double fill)
      : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  int size() const { return rows * cols; }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, double v) { return Mat(r, c, v); }

  static Mat randn(int r, int c, Rng& rng, double stddev = 1.0) {
    Mat m(r, c);
    for (auto& x : m.a) x = rng.normal() * stddev;
    return m;
  }

  // Glorot uniform, the default for weight matrices.
  static Mat glorot(int r, int c, Rng& rng) {
    Mat m(r, c);
    double lim = std::sqrt(6.0 / (r + c));
    for (auto& x : m.a) x = rng.uniform(-lim, lim);
    return m;
  }

  static Mat from_rows(const std::vector<std::vector<double>>& rows_in) {
    if (rows_in.empty()) return Mat();
    Mat m(static_cast<int>(rows_in.size()), static_cast<int>(rows_in[0].size()));
    for (int r = 0; r < m.rows; ++r) {
      assert(static_cast<int>(rows_in[r].size()) == m.cols);
      for (int c = 0; c < m.cols; ++c) m(r, c) = rows_in[r][c];
    }
    return m;
  }

  void fill(double v) { std::fill(a.begin(), a.end(), v); }

  void add_inplace(const Mat& o, double scale = 1.0) {
    assert(same_shape(o));
    for (int i = 0; i < size(); ++i) a[i] += scale * o.a[i];
  }

  void scale_inplace(double s) {
    for (auto& x : a) x *= s;
  }

  double frob_norm() const {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double x : a)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool bitwise_equal(const Mat& o) const {
    return same_shape(o) &&
           std::memcmp(a.data(), o.a.data(), a.size() * sizeof(double)) == 0;
  }
};

inline Mat matmul(const Mat& x, const Mat& y) {
  assert(x.cols == y.rows);
  Mat out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int k = 0; k < x.cols; ++k) {
      double v = x(i, k);
      if (v == 0.0) continue;
      const double* yrow = &y.a[static_cast<size_t>(k) * y.cols];
      double* orow = &out.a[static_cast<size_t>(i) * out.cols];
      for (int j = 0; j < y.cols; ++j) orow[j] += v * yrow[j];
    }
  }
  return out;
}

inline Mat transposed(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  return out;
}

inline double dot(const Mat& x, const Mat& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x.a[i] * y.a[i];
  return s;
}

}  // namespace scribe
