#include "gradeloss/eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "gradeloss/pipeline.hpp"

namespace gradeloss {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  sd = 0;
  if (v.size() < 2) return;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
}

std::vector<int> truths_of(const Dataset& dataset, std::span<const std::size_t> ids) {
  std::vector<int> t;
  for (std::size_t id : ids) t.push_back(is_fractured(dataset.samples.at(id).grade) ? 1 : 0);
  return t;
}

}  // namespace

nlohmann::json Metrics::to_json() const {
  return {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn},
          {"sensitivity", sensitivity}, {"specificity", specificity}, {"f1", f1}};
}

Metrics confusion_metrics(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("prediction/truth length mismatch: " + std::to_string(predictions.size()) + " vs " +
                                std::to_string(truths.size()));
  Metrics m;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if ((predictions[i] | truths[i]) & ~1) throw std::invalid_argument("confusion metrics take 0/1 labels");
    const bool p = predictions[i] != 0;
    const bool t = truths[i] != 0;
    if (p && t) ++m.tp;
    else if (p) ++m.fp;
    else if (t) ++m.fn;
    else ++m.tn;
  }
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  return m;
}

nlohmann::json FoldSummary::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : folds) per.push_back(m.to_json());
  return {{"folds", per},
          {"mean", {{"sensitivity", mean_sensitivity}, {"specificity", mean_specificity}, {"f1", mean_f1}}},
          {"std", {{"sensitivity", std_sensitivity}, {"specificity", std_specificity}, {"f1", std_f1}}}};
}

FoldSummary summarize(std::vector<Metrics> folds) {
  if (folds.empty()) throw std::invalid_argument("no folds to summarize");
  FoldSummary s;
  std::vector<double> sn, sp, f1;
  for (const auto& m : folds) {
    sn.push_back(m.sensitivity);
    sp.push_back(m.specificity);
    f1.push_back(m.f1);
  }
  mean_std(sn, s.mean_sensitivity, s.std_sensitivity);
  mean_std(sp, s.mean_specificity, s.std_specificity);
  mean_std(f1, s.mean_f1, s.std_f1);
  s.folds = std::move(folds);
  return s;
}

// ---------------------------------------------------------------- probe

double LinearProbe::decision(const Eigen::VectorXd& e) const {
  if (e.size() != weights.size()) throw std::invalid_argument("probe input dimension mismatch");
  return weights.dot(((e - mean).array() / scale.array()).matrix()) + bias;
}

LinearProbe linear_probe_train(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                               const ProbeOptions& options, std::uint64_t seed) {
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index d = embeddings.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("probe labels/embeddings mismatch");
  if (n == 0 || d == 0) throw std::invalid_argument("probe needs at least one embedding");
  if (!embeddings.allFinite()) throw std::invalid_argument("non-finite embeddings passed to the probe");
  if (!(options.lambda > 0) || options.iterations < 2) throw std::invalid_argument("probe needs lambda > 0 and >= 2 iterations");
  const bool any_pos = std::any_of(labels.begin(), labels.end(), [](int l) { return l != 0; });
  const bool any_neg = std::any_of(labels.begin(), labels.end(), [](int l) { return l == 0; });
  if (!any_pos || !any_neg) throw std::invalid_argument("probe needs samples of both classes");

  LinearProbe probe;
  probe.mean = embeddings.colwise().mean().transpose();
  const Eigen::MatrixXd centred = embeddings.rowwise() - probe.mean.transpose();
  probe.scale = (centred.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  for (Eigen::Index k = 0; k < d; ++k)
    if (!(probe.scale(k) > 1e-12)) probe.scale(k) = 1.0;

  // Augmented features [z, 1] so the bias is learned with the weights.
  Eigen::MatrixXd z(n, d + 1);
  z.leftCols(d) = centred.array().rowwise() / probe.scale.transpose().array();
  z.col(d).setOnes();

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d + 1);
  const int burn = options.iterations / 2;
  for (int t = 1; t <= options.iterations; ++t) {
    const Eigen::Index i = pick(rng);
    const double y = labels[static_cast<std::size_t>(i)] != 0 ? 1.0 : -1.0;
    const double eta = 1.0 / (options.lambda * t);
    const bool violated = y * z.row(i).dot(w) < 1.0;
    w *= 1.0 - eta * options.lambda;
    if (violated) w += eta * y * z.row(i).transpose();
    if (t > burn) avg += w;
  }
  avg /= static_cast<double>(options.iterations - burn);
  probe.weights = avg.head(d);
  probe.bias = avg(d);
  return probe;
}

// ---------------------------------------------------------------- protocols

Eigen::MatrixXd embed(const Model& model, const Dataset& dataset, std::span<const std::size_t> ids) {
  constexpr std::size_t chunk = 64;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), model.output_dim());
  for (std::size_t s = 0; s < ids.size(); s += chunk) {
    const auto part = ids.subspan(s, std::min(chunk, ids.size() - s));
    const Tensor2<float> y = model.infer(make_batch(dataset, part));
    out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(part.size())) =
        y.transpose().cast<double>();
  }
  return out;
}

Metrics evaluate_probe(const Model& model, const Dataset& dataset, const FoldSplit& fold,
                       const ProbeOptions& options, std::uint64_t seed) {
  if (model.head() != Head::Embedding) throw std::invalid_argument("probe evaluation needs the embedding head");
  const Eigen::MatrixXd train = embed(model, dataset, fold.train_ids);
  const std::vector<int> train_labels = truths_of(dataset, fold.train_ids);
  const LinearProbe probe =
      linear_probe_train(train, train_labels, options, mix_seed(seed, static_cast<std::uint64_t>(fold.fold_id)));
  const Eigen::MatrixXd test = embed(model, dataset, fold.test_ids);
  std::vector<int> pred;
  for (Eigen::Index i = 0; i < test.rows(); ++i) pred.push_back(probe.predict(test.row(i).transpose()));
  return confusion_metrics(pred, truths_of(dataset, fold.test_ids));
}

FoldSummary evaluate_probe_protocol(const Model& model, const Dataset& dataset, std::span<const FoldSplit> folds,
                                    const ProbeOptions& options, std::uint64_t seed) {
  std::vector<Metrics> per;
  for (const auto& f : folds) per.push_back(evaluate_probe(model, dataset, f, options, seed));
  return summarize(std::move(per));
}

Metrics evaluate_classifier(const Model& model, const Dataset& dataset, const FoldSplit& fold) {
  if (model.head() != Head::Classifier) throw std::invalid_argument("classifier evaluation needs the 2-logit head");
  const Eigen::MatrixXd logits = embed(model, dataset, fold.test_ids);
  std::vector<int> pred;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) pred.push_back(logits(i, 1) > logits(i, 0) ? 1 : 0);
  return confusion_metrics(pred, truths_of(dataset, fold.test_ids));
}

FoldSummary evaluate_classifier(std::span<const Model> models, const Dataset& dataset,
                                std::span<const FoldSplit> folds) {
  if (models.size() != folds.size()) throw std::invalid_argument("need one classifier per fold");
  std::vector<Metrics> per;
  for (std::size_t i = 0; i < folds.size(); ++i) per.push_back(evaluate_classifier(models[i], dataset, folds[i]));
  return summarize(std::move(per));
}

// ---------------------------------------------------------------- projection

Eigen::MatrixXd project_2d(const Eigen::MatrixXd& embeddings) {
  if (embeddings.rows() < 2) throw std::invalid_argument("projection needs at least 2 embeddings");
  if (!embeddings.allFinite()) throw std::invalid_argument("non-finite embeddings passed to the projection");
  const Eigen::MatrixXd centred = embeddings.rowwise() - embeddings.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(embeddings.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(d, 2);
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index top = 0;
    v.cwiseAbs().maxCoeff(&top);
    if (v(top) < 0) v = -v;
    basis.col(k) = v;
  }
  return centred * basis;
}

}  // namespace gradeloss
