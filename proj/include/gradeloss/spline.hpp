#pragma once

#include <Eigen/Core>

#include <vector>

namespace gradeloss {

/// Natural cubic spline through 3-D points, parameterized by cumulative
/// chord length. Outside [0, length] the curve continues along the end
/// tangents (which is C2 since the end curvature is zero).
class NaturalCubicSpline {
 public:
  explicit NaturalCubicSpline(const std::vector<Eigen::Vector3d>& points);

  double parameter_length() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }

  Eigen::Vector3d eval(double s) const;
  Eigen::Vector3d derivative(double s) const;
  Eigen::Vector3d second_derivative(double s) const;

  /// Arc length from parameter 0 to s (negative for s < 0).
  double arc_length(double s) const;
  /// Parameter at which arc_length equals a.
  double parameter_at_arc(double a) const;
  double total_arc_length() const { return cumulative_.back(); }

 private:
  std::size_t segment(double s) const;
  double segment_arc(std::size_t i, double t0, double t1) const;

  std::vector<double> knots_;
  std::vector<Eigen::Vector3d> points_;
  std::vector<Eigen::Vector3d> second_;  // second derivatives at knots
  std::vector<double> cumulative_;       // arc length at knots
};

}  // namespace gradeloss
