#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeloss/backbone.hpp"
#include "gradeloss/mining.hpp"
#include "gradeloss/phantom.hpp"

namespace gradeloss {

/// Confusion counts with fractured as the positive class.
struct Metrics {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  double sensitivity = 0;
  double specificity = 0;
  double f1 = 0;

  nlohmann::json to_json() const;
};

Metrics confusion_metrics(std::span<const int> predictions, std::span<const int> truths);

struct FoldSummary {
  std::vector<Metrics> folds;
  double mean_sensitivity = 0, std_sensitivity = 0;
  double mean_specificity = 0, std_specificity = 0;
  double mean_f1 = 0, std_f1 = 0;

  nlohmann::json to_json() const;
};

/// Mean and sample standard deviation (0 for a single fold).
FoldSummary summarize(std::vector<Metrics> folds);

struct ProbeOptions {
  double lambda = 1e-3;
  int iterations = 100000;
};

/// Linear SVM on standardized features: decision sign(w . z + b) with
/// z = (e - mean) / scale.
struct LinearProbe {
  Eigen::VectorXd weights;
  double bias = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  double decision(const Eigen::VectorXd& e) const;
  int predict(const Eigen::VectorXd& e) const { return decision(e) > 0 ? 1 : 0; }
};

/// Primal hinge SVM fit by stochastic subgradient steps (Pegasos schedule,
/// step 1/(lambda t)), returning the average of the second half of the
/// iterates. Rows of `embeddings` are samples; labels are 0/1.
LinearProbe linear_probe_train(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                               const ProbeOptions& options, std::uint64_t seed);

/// Eval-mode network outputs for the given samples, one row per sample.
Eigen::MatrixXd embed(const Model& model, const Dataset& dataset, std::span<const std::size_t> ids);

/// Fit a probe on the fold's training embeddings and score its test split.
Metrics evaluate_probe(const Model& model, const Dataset& dataset, const FoldSplit& fold,
                       const ProbeOptions& options, std::uint64_t seed);
FoldSummary evaluate_probe_protocol(const Model& model, const Dataset& dataset, std::span<const FoldSplit> folds,
                                    const ProbeOptions& options = {}, std::uint64_t seed = 0);

/// Argmax over classifier logits on the fold's test split.
Metrics evaluate_classifier(const Model& model, const Dataset& dataset, const FoldSplit& fold);
FoldSummary evaluate_classifier(std::span<const Model> models, const Dataset& dataset,
                                std::span<const FoldSplit> folds);

/// PCA onto the top two principal directions of the centred rows; each
/// direction's largest-magnitude component is made positive.
Eigen::MatrixXd project_2d(const Eigen::MatrixXd& embeddings);

/// Scatter plot of 2-D points coloured by grade.
std::string scatter_svg(const Eigen::MatrixXd& points, std::span<const Grade> grades, const std::string& title);
std::string projection_csv(const Eigen::MatrixXd& points, std::span<const std::int64_t> ids,
                           std::span<const Grade> grades);

}  // namespace gradeloss
