#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "gradeloss/eval.hpp"
#include "gradeloss/phantom.hpp"

namespace oracle {

/// Scalar-loop squared distance.
inline double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Central difference of f around x along every component.
inline Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                    double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// |a - n| / max(|a|, |n|), with agreement below `floor` treated as exact.
inline double rel_err(double a, double n, double floor = 1e-7) {
  const double scale = std::max(std::abs(a), std::abs(n));
  if (scale < floor) return 0.0;
  return std::abs(a - n) / scale;
}

/// Confusion counts by enumerating the four cases separately.
inline gradeloss::Metrics brute_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
  gradeloss::Metrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && truth[i] == 1) m.tp += 1;
    if (pred[i] == 1 && truth[i] == 0) m.fp += 1;
    if (pred[i] == 0 && truth[i] == 0) m.tn += 1;
    if (pred[i] == 0 && truth[i] == 1) m.fn += 1;
  }
  m.sensitivity = m.tp + m.fn ? double(m.tp) / double(m.tp + m.fn) : 0.0;
  m.specificity = m.tn + m.fp ? double(m.tn) / double(m.tn + m.fp) : 0.0;
  const double den = double(2 * m.tp + m.fp + m.fn);
  m.f1 = den > 0 ? 2.0 * double(m.tp) / den : 0.0;
  return m;
}

/// Height in mm of the bright run crossing the patch centre row in column
/// `col`: fractional foreground coverage summed outward from the centre row
/// until it falls below 10 %, so blurred edges keep their total mass.
inline double column_height_mm(const gradeloss::PatchSample& s, int col, double pixel_mm) {
  const auto& img = s.patch.image;
  const double fg = s.params.foreground, bg = s.params.background;
  auto frac = [&](int r) { return std::clamp((img(r, col) - bg) / (fg - bg), 0.0, 1.0); };
  const int c0 = s.params.center_row;
  if (frac(c0) < 0.5) return 0.0;
  double h = 0;
  for (int r = c0; r >= 0; --r) {
    h += frac(r);
    if (frac(r) < 0.1) break;
  }
  for (int r = c0 + 1; r < img.rows(); ++r) {
    h += frac(r);
    if (frac(r) < 0.1) break;
  }
  return h * pixel_mm;
}

/// Column index of relative anterior-posterior position u of the central body.
inline int column_at(const gradeloss::PatchSample& s, double u, double pixel_mm) {
  const double x = (u - 0.5) * s.params.body_width_mm;
  return s.params.center_col + static_cast<int>(std::lround(x / pixel_mm));
}

/// Mean column height over relative positions [u0, u1] in steps of 0.05.
inline double mean_height_mm(const gradeloss::PatchSample& s, double u0, double u1, double pixel_mm) {
  double sum = 0;
  int n = 0;
  for (double u = u0; u <= u1 + 1e-9; u += 0.05, ++n) sum += column_height_mm(s, column_at(s, u, pixel_mm), pixel_mm);
  return sum / n;
}

/// Polyline arc length of a 3-D curve sampled densely.
inline double polyline_length(const std::function<Eigen::Vector3d(double)>& curve, double t0, double t1, int n) {
  double len = 0;
  Eigen::Vector3d prev = curve(t0);
  for (int i = 1; i <= n; ++i) {
    const Eigen::Vector3d p = curve(t0 + (t1 - t0) * i / n);
    len += (p - prev).norm();
    prev = p;
  }
  return len;
}

}  // namespace oracle
