#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cfr/error.hpp"

namespace cfr {

using Vector = std::vector<double>;

/// A point in feature space. Plain vector; finiteness is checked at API boundaries.
using FeatureVector = Vector;

namespace la {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double dist1(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

inline Vector sub(std::span<const double> a, std::span<const double> b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vector add(std::span<const double> a, std::span<const double> b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vector scaled(std::span<const double> a, double s) {
  Vector r(a.begin(), a.end());
  for (double& v : r) v *= s;
  return r;
}

/// r += s * a
inline void axpy(double s, std::span<const double> a, std::span<double> r) {
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += s * a[i];
}

/// Euclidean projection onto the closed ball of the given radius.
inline Vector project_ball(Vector v, double radius) {
  const double n = norm2(v);
  if (n > radius) {
    const double s = radius / n;
    for (double& x : v) x *= s;
    // rounding can leave the norm a few ulps above the radius
    while (norm2(v) > radius)
      for (double& x : v) x = std::nextafter(x, 0.0);
  }
  return v;
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void require_dim(std::span<const double> x, std::size_t dim, const char* what) {
  if (x.size() != dim)
    fail(ErrorCode::Input, std::string(what) + ": dimension mismatch (expected " +
                               std::to_string(dim) + ", got " + std::to_string(x.size()) + ")");
}

}  // namespace la
}  // namespace cfr
