#include "evalign/pca.hpp"

#include <algorithm>
#include <cmath>

#include "evalign/error.hpp"
#include "evalign/rng.hpp"

namespace evalign {

namespace {

Vec multiply(const Matrix& m, const Vec& v) {
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), v);
  return out;
}

void orthogonalize(Vec& v, const Vec* against) {
  if (!against) return;
  const double p = dot(v, *against);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * (*against)[i];
}

void fix_sign(Vec& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (v[best] < 0)
    for (double& x : v) x = -x;
}

// Dominant eigenvector of a PSD matrix, restricted to the complement of
// `against` when given.
Vec power_iteration(const Matrix& cov, const Vec* against, Rng& rng, const PcaOptions& opt) {
  const std::size_t d = cov.rows;
  Vec v(d);
  double n = 0.0;
  while (n < 1e-12) {
    for (double& x : v) x = rng.normal();
    orthogonalize(v, against);
    n = norm(v);
  }
  for (double& x : v) x /= n;

  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    Vec w = multiply(cov, v);
    orthogonalize(w, against);
    const double wn = norm(w);
    // Null space: any unit vector in the complement is an eigenvector.
    if (wn < 1e-300) break;
    for (double& x : w) x /= wn;
    double diff = 0.0;
    for (std::size_t i = 0; i < d; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
    v = std::move(w);
    if (diff < opt.tolerance) break;
  }
  orthogonalize(v, against);
  const double vn = norm(v);
  for (double& x : v) x /= vn;
  fix_sign(v);
  return v;
}

}  // namespace

Pca2d pca_2d(std::span<const Vec> points, const PcaOptions& options) {
  if (points.size() < 2) throw_numeric("pca needs at least two points");
  const std::size_t d = points.front().size();
  if (d < 2) throw_numeric("pca needs at least two dimensions");
  for (const Vec& p : points)
    if (p.size() != d) throw_data("pca: inconsistent point dimensions");

  Pca2d out;
  out.mean.assign(d, 0.0);
  for (const Vec& p : points)
    for (std::size_t i = 0; i < d; ++i) out.mean[i] += p[i];
  for (double& m : out.mean) m /= static_cast<double>(points.size());

  Matrix cov(d, d);
  for (const Vec& p : points)
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = p[i] - out.mean[i];
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += ci * (p[j] - out.mean[j]);
    }
  for (double& c : cov.data) c /= static_cast<double>(points.size() - 1);
  for (std::size_t i = 0; i < d; ++i) out.total_variance += cov(i, i);
  if (!(out.total_variance > 1e-24)) throw_numeric("degenerate covariance: all points identical");

  Rng rng(options.seed);
  out.components[0] = power_iteration(cov, nullptr, rng, options);
  out.components[1] = power_iteration(cov, &out.components[0], rng, options);
  for (std::size_t c = 0; c < 2; ++c)
    out.eigenvalues[c] = dot(out.components[c], multiply(cov, out.components[c]));

  out.coordinates = Matrix(points.size(), 2);
  Vec centered(d);
  for (std::size_t r = 0; r < points.size(); ++r) {
    for (std::size_t i = 0; i < d; ++i) centered[i] = points[r][i] - out.mean[i];
    out.coordinates(r, 0) = dot(centered, out.components[0]);
    out.coordinates(r, 1) = dot(centered, out.components[1]);
  }
  return out;
}

}  // namespace evalign
