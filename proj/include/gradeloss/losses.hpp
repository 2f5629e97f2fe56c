#pragma once

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradeloss/types.hpp"

namespace gradeloss {

template <typename Scalar>
using Embedding = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Loss total, its named sub-terms and one gradient per input vector
/// (same order as the arguments of the loss function).
template <typename Scalar>
struct LossValue {
  Scalar total{0};
  std::map<std::string, Scalar> terms;
  std::vector<Embedding<Scalar>> gradients;
};

/// Thresholds of the grading loss; construction enforces alpha > beta > gamma > 0.
struct GradingMargins {
  double alpha = 1.5;
  double beta = 1.0;
  double gamma = 0.5;

  GradingMargins() = default;
  GradingMargins(double a, double b, double g) : alpha(a), beta(b), gamma(g) { validate(); }

  void validate() const {
    if (!(alpha > beta && beta > gamma && gamma > 0.0))
      throw std::invalid_argument("grading margins must satisfy alpha > beta > gamma > 0");
  }
};

// Textual pulls the positive anchor towards its match, Literal keeps the
// printed max(0, gamma - d) form that pushes it away.
enum class ClusteringMode { Textual, Literal };

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string("non-finite values in ") + what);
}

template <typename A, typename B>
void require_same_dim(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("embedding dimension mismatch: " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
}

template <typename Scalar>
Scalar hinge(Scalar x) {
  return x > Scalar(0) ? x : Scalar(0);
}

}  // namespace detail

/// Squared Euclidean distance ||a - b||^2.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar sq_dist(const Eigen::MatrixBase<DerivedA>& a,
                                  const Eigen::MatrixBase<DerivedB>& b) {
  detail::require_same_dim(a, b);
  detail::require_finite(a, "sq_dist input");
  detail::require_finite(b, "sq_dist input");
  return (a - b).squaredNorm();
}

/// Ranked quadruplet loss L1 + L2 + L3 over a static (g0, g2, g3) triplet
/// and a positive anchor of class `anchor_class`.
///
/// L1 = max(0, d(g2,g3) - d(g2,g0) + alpha)
/// L2 = max(0, d(g0,g2) - d(g0,g3) + beta)
/// L3 = max(0, d(match,anchor) - gamma)   (Textual)
///    = max(0, gamma - d(match,anchor))   (Literal)
///
/// Gradients are returned for (g0, g2, g3, anchor). A hinge whose argument is
/// exactly zero contributes no gradient.
template <typename Scalar>
LossValue<Scalar> grading_loss(const Embedding<Scalar>& e_g0, const Embedding<Scalar>& e_g2,
                               const Embedding<Scalar>& e_g3, const Embedding<Scalar>& e_anchor,
                               Grade anchor_class, const GradingMargins& margins,
                               ClusteringMode mode = ClusteringMode::Textual) {
  margins.validate();
  const Scalar d23 = sq_dist(e_g2, e_g3);
  const Scalar d20 = sq_dist(e_g2, e_g0);
  const Scalar d03 = sq_dist(e_g0, e_g3);
  const Scalar d02 = d20;
  detail::require_same_dim(e_g0, e_anchor);
  detail::require_finite(e_anchor, "grading_loss anchor");

  const int match = grade_slot(anchor_class);
  if (match < 0) throw std::invalid_argument("invalid anchor class");
  const Embedding<Scalar>* triplet[3] = {&e_g0, &e_g2, &e_g3};
  const Embedding<Scalar>& e_match = *triplet[match];
  const Scalar dma = sq_dist(e_match, e_anchor);

  const auto alpha = static_cast<Scalar>(margins.alpha);
  const auto beta = static_cast<Scalar>(margins.beta);
  const auto gamma = static_cast<Scalar>(margins.gamma);

  // Hinge arguments are written as (lhs + margin) - rhs so that a satisfied
  // constraint lhs + margin <= rhs gives an exactly non-positive argument.
  const Scalar arg1 = (d23 + alpha) - d20;
  const Scalar arg2 = (d02 + beta) - d03;
  const Scalar arg3 = mode == ClusteringMode::Textual ? dma - gamma : gamma - dma;

  LossValue<Scalar> out;
  out.terms["L1"] = detail::hinge(arg1);
  out.terms["L2"] = detail::hinge(arg2);
  out.terms["L3"] = detail::hinge(arg3);
  out.total = out.terms["L1"] + out.terms["L2"] + out.terms["L3"];

  const Eigen::Index dim = e_g0.size();
  out.gradients.assign(4, Embedding<Scalar>::Zero(dim));
  auto& g0 = out.gradients[0];
  auto& g2 = out.gradients[1];
  auto& g3 = out.gradients[2];
  if (arg1 > Scalar(0)) {
    g2 += Scalar(2) * (e_g0 - e_g3);
    g3 += Scalar(2) * (e_g3 - e_g2);
    g0 += Scalar(2) * (e_g2 - e_g0);
  }
  if (arg2 > Scalar(0)) {
    g0 += Scalar(2) * (e_g3 - e_g2);
    g2 += Scalar(2) * (e_g2 - e_g0);
    g3 += Scalar(2) * (e_g0 - e_g3);
  }
  if (arg3 > Scalar(0)) {
    const Scalar sign = mode == ClusteringMode::Textual ? Scalar(1) : Scalar(-1);
    out.gradients[match] += sign * Scalar(2) * (e_match - e_anchor);
    out.gradients[3] += sign * Scalar(2) * (e_anchor - e_match);
  }
  return out;
}

/// max(0, d(a,p) - d(a,n) + margin); gradients for (anchor, positive, negative).
template <typename Scalar>
LossValue<Scalar> triplet_loss(const Embedding<Scalar>& anchor, const Embedding<Scalar>& positive,
                               const Embedding<Scalar>& negative, Scalar margin = Scalar(1)) {
  if (!(margin >= Scalar(0))) throw std::invalid_argument("triplet margin must be nonnegative");
  const Scalar dap = sq_dist(anchor, positive);
  const Scalar dan = sq_dist(anchor, negative);
  const Scalar arg = (dap + margin) - dan;

  LossValue<Scalar> out;
  out.terms["triplet"] = detail::hinge(arg);
  out.total = out.terms["triplet"];
  out.gradients.assign(3, Embedding<Scalar>::Zero(anchor.size()));
  if (arg > Scalar(0)) {
    out.gradients[0] = Scalar(2) * (negative - positive);
    out.gradients[1] = Scalar(2) * (positive - anchor);
    out.gradients[2] = Scalar(2) * (anchor - negative);
  }
  return out;
}

/// Squared-distance contrastive loss: d(a,b) for similar pairs,
/// max(0, margin - d(a,b)) for dissimilar ones. Gradients for (a, b).
template <typename Scalar>
LossValue<Scalar> contrastive_loss(const Embedding<Scalar>& a, const Embedding<Scalar>& b,
                                   bool similar, Scalar margin = Scalar(1)) {
  if (!(margin >= Scalar(0))) throw std::invalid_argument("contrastive margin must be nonnegative");
  const Scalar d = sq_dist(a, b);
  LossValue<Scalar> out;
  out.gradients.assign(2, Embedding<Scalar>::Zero(a.size()));
  if (similar) {
    out.terms["similar"] = d;
    out.total = d;
    out.gradients[0] = Scalar(2) * (a - b);
    out.gradients[1] = Scalar(2) * (b - a);
  } else {
    const Scalar arg = margin - d;
    out.terms["dissimilar"] = detail::hinge(arg);
    out.total = out.terms["dissimilar"];
    if (arg > Scalar(0)) {
      out.gradients[0] = Scalar(2) * (b - a);
      out.gradients[1] = Scalar(2) * (a - b);
    }
  }
  return out;
}

/// Softmax cross-entropy with log-sum-exp stabilization; gradient wrt logits
/// is softmax(logits) - one_hot(label).
template <typename Scalar>
LossValue<Scalar> cross_entropy(const Embedding<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy label " + std::to_string(label) + " out of range");
  detail::require_finite(logits, "cross_entropy logits");

  Eigen::Index top = 0;
  const Scalar max_logit = logits.maxCoeff(&top);
  const Embedding<Scalar> shifted = logits.array() - max_logit;
  const Embedding<Scalar> expd = shifted.array().exp();
  // exp(0) of the max entry is split off so small tails go through log1p.
  const Scalar tail = expd.sum() - expd(top);
  const Scalar log_norm = std::log1p(tail);

  LossValue<Scalar> out;
  out.total = log_norm - shifted(label);
  out.terms["cross_entropy"] = out.total;
  Embedding<Scalar> grad = expd / (Scalar(1) + tail);
  grad(label) -= Scalar(1);
  out.gradients.push_back(std::move(grad));
  return out;
}

}  // namespace gradeloss
