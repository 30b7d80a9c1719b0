#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "evalign/linalg.hpp"

namespace evalign {

struct PcaOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 1000;
  std::uint64_t seed = 0;
};

struct Pca2d {
  std::array<Vec, 2> components;    // orthonormal principal directions
  std::array<double, 2> eigenvalues{};  // sample covariance eigenvalues
  double total_variance = 0.0;      // trace of the covariance
  Vec mean;
  Matrix coordinates;               // n x 2 centered projections

  double explained_ratio() const { return (eigenvalues[0] + eigenvalues[1]) / total_variance; }
};

/// Top-2 principal components by power iteration, the second iterated in the
/// orthogonal complement of the first. Component
/// signs are fixed so the largest-magnitude entry is positive. Throws
/// Error(numeric) when all points coincide.
Pca2d pca_2d(std::span<const Vec> points, const PcaOptions& options = {});

}  // namespace evalign
