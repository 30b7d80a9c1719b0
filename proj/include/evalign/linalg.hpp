#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace evalign {

using Vec = std::vector<double>;

/// Dense row-major matrix. Only what the engine needs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

template <typename T>
Vec to_vec(std::span<const T> x) {
  return Vec(x.begin(), x.end());
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace evalign
