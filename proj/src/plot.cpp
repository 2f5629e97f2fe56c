#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "gradeloss/eval.hpp"

namespace gradeloss {

namespace {

constexpr std::array<const char*, 3> kColors{"#2b83ba", "#fdae61", "#d7191c"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string scatter_svg(const Eigen::MatrixXd& points, std::span<const Grade> grades, const std::string& title) {
  if (points.cols() != 2) throw std::invalid_argument("scatter plot needs 2-D points");
  if (static_cast<std::size_t>(points.rows()) != grades.size()) throw std::invalid_argument("one grade per point");
  constexpr double size = 480, margin = 40;
  double xmin = points.rows() ? points.col(0).minCoeff() : 0, xmax = points.rows() ? points.col(0).maxCoeff() : 1;
  double ymin = points.rows() ? points.col(1).minCoeff() : 0, ymax = points.rows() ? points.col(1).maxCoeff() : 1;
  if (xmax - xmin < 1e-12) { xmin -= 1; xmax += 1; }
  if (ymax - ymin < 1e-12) { ymin -= 1; ymax += 1; }
  const double span = size - 2 * margin;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 30
      << "\" viewBox=\"0 0 " << size << ' ' << size + 30 << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << size / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << escape_xml(title) << "</text>\n";
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << span << "\" height=\"" << span
      << "\" fill=\"none\" stroke=\"#999\"/>\n";
  // Draw healthy first so the rarer fracture points stay visible.
  for (int slot = 0; slot < 3; ++slot)
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      if (grade_slot(grades[static_cast<std::size_t>(i)]) != slot) continue;
      const double x = margin + (points(i, 0) - xmin) / (xmax - xmin) * span;
      const double y = margin + (1.0 - (points(i, 1) - ymin) / (ymax - ymin)) * span;
      svg << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y) << "\" r=\"3\" fill=\"" << kColors[slot]
          << "\" fill-opacity=\"0.8\"/>\n";
    }
  for (int slot = 0; slot < 3; ++slot) {
    const double x = margin + 10 + slot * 110;
    svg << "<circle cx=\"" << x << "\" cy=\"" << size + 12 << "\" r=\"5\" fill=\"" << kColors[slot] << "\"/>"
        << "<text x=\"" << x + 10 << "\" y=\"" << size + 16 << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << grade_name(kGrades[slot]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string projection_csv(const Eigen::MatrixXd& points, std::span<const std::int64_t> ids,
                           std::span<const Grade> grades) {
  if (points.cols() != 2) throw std::invalid_argument("projection CSV needs 2-D points");
  if (static_cast<std::size_t>(points.rows()) != ids.size() || ids.size() != grades.size())
    throw std::invalid_argument("ids, grades and points must have the same length");
  std::ostringstream csv;
  csv << "id,grade,x,y\n";
  csv.precision(17);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    csv << ids[static_cast<std::size_t>(i)] << ',' << grade_name(grades[static_cast<std::size_t>(i)]) << ','
        << points(i, 0) << ',' << points(i, 1) << '\n';
  return csv.str();
}

}  // namespace gradeloss
