#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gradeloss/backbone.hpp"

namespace gradeloss {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment tensors are created lazily on the
/// first step and must keep matching the parameter shapes afterwards.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return steps_; }

  void step(std::span<const ParamRef<Scalar>> params) {
    for (const auto& p : params)
      if (!p.grad->allFinite())
        throw std::runtime_error("non-finite gradient for " + p.name + "; Adam update refused");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Tensor2<Scalar>::Zero(p.value->rows(), p.value->cols()));
        second_.push_back(Tensor2<Scalar>::Zero(p.value->rows(), p.value->cols()));
      }
    }
    if (first_.size() != params.size()) throw std::invalid_argument("parameter list changed between Adam steps");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (first_[i].rows() != params[i].value->rows() || first_[i].cols() != params[i].value->cols())
        throw std::invalid_argument("moment shape mismatch for " + params[i].name);

    ++steps_;
    const double t = static_cast<double>(steps_);
    const auto b1 = static_cast<Scalar>(config_.beta1);
    const auto b2 = static_cast<Scalar>(config_.beta2);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(config_.beta1, t));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(config_.beta2, t));
    const auto lr = static_cast<Scalar>(config_.learning_rate);
    const auto eps = static_cast<Scalar>(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = params[i].grad->array();
      first_[i].array() = b1 * first_[i].array() + (Scalar(1) - b1) * g;
      second_[i].array() = b2 * second_[i].array() + (Scalar(1) - b2) * g.square();
      params[i].value->array() -=
          lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
    }
  }

  void step(Backbone<Scalar>& model) {
    const auto params = model.parameters();
    step(std::span<const ParamRef<Scalar>>(params));
  }

  const std::vector<Tensor2<Scalar>>& first_moments() const { return first_; }
  const std::vector<Tensor2<Scalar>>& second_moments() const { return second_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor2<Scalar>> first_;
  std::vector<Tensor2<Scalar>> second_;
};

}  // namespace gradeloss
