#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "gradeloss/phantom.hpp"
#include "gradeloss/spline.hpp"

namespace gradeloss {

// ---------------------------------------------------------------- spline

NaturalCubicSpline::NaturalCubicSpline(const std::vector<Eigen::Vector3d>& points) : points_(points) {
  const std::size_t n = points.size();
  if (n < 3) throw std::invalid_argument("cubic spline reformation needs at least 3 centroids");
  knots_.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double h = (points[i] - points[i - 1]).norm();
    if (!(h > 0.0)) throw std::invalid_argument("spline points must be distinct");
    knots_[i] = knots_[i - 1] + h;
  }

  // Thomas algorithm on the interior second-derivative system.
  second_.assign(n, Eigen::Vector3d::Zero());
  const std::size_t m = n - 2;
  std::vector<double> diag(m), upper(m);
  std::vector<Eigen::Vector3d> rhs(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = k + 1;
    const double h0 = knots_[i] - knots_[i - 1];
    const double h1 = knots_[i + 1] - knots_[i];
    diag[k] = 2.0 * (h0 + h1);
    upper[k] = h1;
    rhs[k] = 6.0 * ((points[i + 1] - points[i]) / h1 - (points[i] - points[i - 1]) / h0);
  }
  for (std::size_t k = 1; k < m; ++k) {
    const double lower = knots_[k + 1] - knots_[k];
    const double w = lower / diag[k - 1];
    diag[k] -= w * upper[k - 1];
    rhs[k] -= w * rhs[k - 1];
  }
  for (std::size_t k = m; k-- > 0;) {
    Eigen::Vector3d v = rhs[k];
    if (k + 1 < m) v -= upper[k] * second_[k + 2];
    second_[k + 1] = v / diag[k];
  }

  cumulative_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) cumulative_[i + 1] = cumulative_[i] + segment_arc(i, knots_[i], knots_[i + 1]);
}

std::size_t NaturalCubicSpline::segment(double s) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), s);
  const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - knots_.begin() - 1, 0));
  return std::min(i, knots_.size() - 2);
}

Eigen::Vector3d NaturalCubicSpline::eval(double s) const {
  if (s < 0.0) return points_.front() + s * derivative(0.0);
  const double end = knots_.back();
  if (s > end) return points_.back() + (s - end) * derivative(end);
  const std::size_t i = segment(s);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - s) / h;
  const double b = 1.0 - a;
  return a * points_[i] + b * points_[i + 1] +
         ((a * a * a - a) * second_[i] + (b * b * b - b) * second_[i + 1]) * (h * h / 6.0);
}

Eigen::Vector3d NaturalCubicSpline::derivative(double s) const {
  s = std::clamp(s, 0.0, knots_.back());
  const std::size_t i = segment(s);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - s) / h;
  const double b = 1.0 - a;
  return (points_[i + 1] - points_[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * second_[i] +
         (3.0 * b * b - 1.0) / 6.0 * h * second_[i + 1];
}

Eigen::Vector3d NaturalCubicSpline::second_derivative(double s) const {
  if (s < 0.0 || s > knots_.back()) return Eigen::Vector3d::Zero();
  const std::size_t i = segment(s);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - s) / h;
  return a * second_[i] + (1.0 - a) * second_[i + 1];
}

double NaturalCubicSpline::segment_arc(std::size_t, double t0, double t1) const {
  // 5-point Gauss-Legendre on 8 sub-intervals.
  static constexpr std::array<double, 5> x{0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                           0.9061798459386640};
  static constexpr std::array<double, 5> w{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                           0.2369268850561891, 0.2369268850561891};
  constexpr int pieces = 8;
  const double step = (t1 - t0) / pieces;
  double total = 0.0;
  for (int p = 0; p < pieces; ++p) {
    const double mid = t0 + (p + 0.5) * step;
    for (int k = 0; k < 5; ++k) total += w[k] * derivative(mid + 0.5 * step * x[k]).norm();
  }
  return total * 0.5 * step;
}

double NaturalCubicSpline::arc_length(double s) const {
  const double end = knots_.back();
  if (s <= 0.0) return s * derivative(0.0).norm();
  if (s >= end) return cumulative_.back() + (s - end) * derivative(end).norm();
  const std::size_t i = segment(s);
  return cumulative_[i] + segment_arc(i, knots_[i], s);
}

double NaturalCubicSpline::parameter_at_arc(double a) const {
  if (a <= 0.0) return a / derivative(0.0).norm();
  if (a >= cumulative_.back()) return knots_.back() + (a - cumulative_.back()) / derivative(knots_.back()).norm();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), a);
  const auto i = static_cast<std::size_t>(it - cumulative_.begin() - 1);
  double lo = knots_[i];
  double hi = knots_[i + 1];
  const double target = a - cumulative_[i];
  for (int iter = 0; iter < 100 && hi - lo > 1e-13; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (segment_arc(i, knots_[i], mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------- volume sampling

bool SpineVolume::sample(double x, double y, double z, float& out) const {
  if (x < 0 || y < 0 || z < 0 || x > nx - 1 || y > ny - 1 || z > nz - 1) {
    out = 0.0f;
    return false;
  }
  const int x0 = std::min(static_cast<int>(x), nx - 2 < 0 ? 0 : nx - 2);
  const int y0 = std::min(static_cast<int>(y), ny - 2 < 0 ? 0 : ny - 2);
  const int z0 = std::min(static_cast<int>(z), nz - 2 < 0 ? 0 : nz - 2);
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  const int x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1), z1 = std::min(z0 + 1, nz - 1);
  const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  out = static_cast<float>(c0 * (1 - fz) + c1 * fz);
  return true;
}

// ---------------------------------------------------------------- reformation

Reformation reformat_curved(const SpineVolume& volume, int pad_mm) {
  if (volume.centroids.size() < 3) throw std::invalid_argument("reformation needs at least 3 centroids");
  if (pad_mm < 0) throw std::invalid_argument("pad_mm must be nonnegative");
  std::vector<Eigen::Vector3d> pts;
  for (const auto& c : volume.centroids) pts.emplace_back(c.position[0], c.position[1], c.position[2]);
  const NaturalCubicSpline spline(pts);

  Reformation out;
  out.pad_mm = pad_mm;
  const double length = spline.total_arc_length();
  const int rows = static_cast<int>(std::ceil(length)) + 2 * pad_mm + 1;
  const int cols = volume.ny;
  const int center_col = cols / 2;
  out.grid = Image::Zero(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const Eigen::Vector3d p = spline.eval(spline.parameter_at_arc(static_cast<double>(r - pad_mm)));
    for (int c = 0; c < cols; ++c) {
      float v = 0.0f;
      if (!volume.sample(p.x(), p.y() + (c - center_col), p.z(), v)) ++out.out_of_bounds;
      out.grid(r, c) = v;
    }
  }
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double a = spline.arc_length(spline.knots()[k]);
    out.arc_positions.push_back(a);
    out.centroids.push_back({a + pad_mm, static_cast<double>(center_col)});
  }
  return out;
}

Patch extract_patch(const Image& grid, ReformationPoint centroid_rc, double sigma_px, int size,
                    std::array<int, 2> jitter) {
  if (size <= 0) throw std::invalid_argument("patch size must be positive");
  if (!(sigma_px > 0.0)) throw std::invalid_argument("heatmap sigma must be positive");
  Patch p{Image::Zero(size, size), Image::Zero(size, size)};
  const double half = size / 2;
  const double r0 = centroid_rc.row + jitter[0] - half;
  const double c0 = centroid_rc.col + jitter[1] - half;
  auto pixel = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= grid.rows() || c >= grid.cols()) return 0.0;
    return grid(r, c);
  };
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double y = r0 + i;
      const double x = c0 + j;
      const double fy = std::floor(y), fx = std::floor(x);
      const double ty = y - fy, tx = x - fx;
      const auto yi = static_cast<long>(fy), xi = static_cast<long>(fx);
      double v = (1 - ty) * ((1 - tx) * pixel(yi, xi) + (tx > 0 ? tx * pixel(yi, xi + 1) : 0.0));
      if (ty > 0) v += ty * ((1 - tx) * pixel(yi + 1, xi) + (tx > 0 ? tx * pixel(yi + 1, xi + 1) : 0.0));
      p.image(i, j) = static_cast<float>(v);
    }
  }
  // The centroid sits at (half - jitter) inside the crop.
  const double cy = half - jitter[0];
  const double cx = half - jitter[1];
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double r2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
      p.heatmap(i, j) = static_cast<float>(std::exp(-r2 / (2.0 * sigma_px * sigma_px)));
    }
  return p;
}

}  // namespace gradeloss
