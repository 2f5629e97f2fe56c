#include "gradeloss/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gradeloss/checkpoint.hpp"
#include "gradeloss/tensor_io.hpp"

namespace gradeloss {

namespace {

constexpr std::array<const char*, 3> kStageNames{"label", "representation", "fracture"};
constexpr std::array<const char*, 4> kLossNames{"contrastive", "triplet", "grading", "cross_entropy"};

using Vec = Embedding<double>;

Vec column(const Tensor2<float>& out, Eigen::Index c) { return out.col(c).cast<double>(); }

}  // namespace

std::string stage_name(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage parse_stage(const std::string& s) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i)
    if (s == kStageNames[i]) return static_cast<Stage>(i);
  throw std::invalid_argument("unknown stage '" + s + "' (expected label, representation or fracture)");
}

std::string loss_name(LossKind l) { return kLossNames[static_cast<int>(l)]; }

LossKind parse_loss(const std::string& s) {
  for (std::size_t i = 0; i < kLossNames.size(); ++i)
    if (s == kLossNames[i]) return static_cast<LossKind>(i);
  throw std::invalid_argument("unknown loss '" + s + "' (expected contrastive, triplet, grading or cross_entropy)");
}

// ---------------------------------------------------------------- config

void TrainingConfig::validate() const {
  network.validate();
  margins.validate();
  if (!(contrastive_margin >= 0) || !(triplet_margin >= 0)) throw std::invalid_argument("loss margins must be nonnegative");
  if (!(similar_fraction >= 0 && similar_fraction <= 1)) throw std::invalid_argument("similar_fraction must lie in [0, 1]");
  if (!(adam.learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (folds.count < 1) throw std::invalid_argument("fold count must be >= 1");
  if (!(folds.test_fraction > 0 && folds.test_fraction < 1)) throw std::invalid_argument("test_fraction must lie in (0, 1)");
  if (probe.iterations < 2 || !(probe.lambda > 0)) throw std::invalid_argument("probe needs lambda > 0 and >= 2 iterations");
  int last = -1;
  for (const auto& p : stages) {
    const int k = static_cast<int>(p.stage);
    if (k <= last)
      throw std::invalid_argument("stage '" + stage_name(p.stage) +
                                  "' out of order; stages run label -> representation -> fracture, each at most once");
    last = k;
    if (p.epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
    if (p.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    const bool ce = p.loss == LossKind::CrossEntropy;
    if (p.stage == Stage::FractureTrain && !ce) throw std::invalid_argument("fracture stage trains with cross_entropy");
    if (p.stage == Stage::LabelPretrain && p.loss != LossKind::Contrastive && p.loss != LossKind::Triplet)
      throw std::invalid_argument("label pre-training uses contrastive or triplet loss");
    if (p.stage == Stage::RepresentationLearn && ce)
      throw std::invalid_argument("representation stage needs a metric loss (contrastive, triplet or grading)");
  }
}

nlohmann::json TrainingConfig::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& p : stages)
    st.push_back({{"stage", stage_name(p.stage)},
                  {"loss", loss_name(p.loss)},
                  {"epochs", p.epochs},
                  {"batch_size", p.batch_size},
                  {"enabled", p.enabled}});
  return {{"network", config_to_json(network)},
          {"learning_rate", adam.learning_rate},
          {"adam_betas", {adam.beta1, adam.beta2}},
          {"adam_epsilon", adam.epsilon},
          {"margins", {{"alpha", margins.alpha}, {"beta", margins.beta}, {"gamma", margins.gamma}}},
          {"clustering", clustering == ClusteringMode::Textual ? "textual" : "literal"},
          {"contrastive_margin", contrastive_margin},
          {"triplet_margin", triplet_margin},
          {"similar_fraction", similar_fraction},
          {"stages", st},
          {"folds", {{"count", folds.count}, {"test_fraction", folds.test_fraction}, {"seed", folds.seed}}},
          {"probe", {{"lambda", probe.lambda}, {"iterations", probe.iterations}}},
          {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  if (j.contains("network")) c.network = config_from_json(j.at("network"));
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  if (j.contains("adam_betas")) {
    c.adam.beta1 = j.at("adam_betas").at(0);
    c.adam.beta2 = j.at("adam_betas").at(1);
  }
  c.adam.epsilon = j.value("adam_epsilon", c.adam.epsilon);
  if (j.contains("margins")) {
    const auto& m = j.at("margins");
    c.margins.alpha = m.value("alpha", c.margins.alpha);
    c.margins.beta = m.value("beta", c.margins.beta);
    c.margins.gamma = m.value("gamma", c.margins.gamma);
  }
  const std::string mode = j.value("clustering", std::string("textual"));
  if (mode != "textual" && mode != "literal") throw std::invalid_argument("clustering must be textual or literal");
  c.clustering = mode == "textual" ? ClusteringMode::Textual : ClusteringMode::Literal;
  c.contrastive_margin = j.value("contrastive_margin", c.contrastive_margin);
  c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
  c.similar_fraction = j.value("similar_fraction", c.similar_fraction);
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      StagePlan p;
      p.stage = parse_stage(s.at("stage"));
      p.loss = parse_loss(s.at("loss"));
      p.epochs = s.value("epochs", p.epochs);
      p.batch_size = s.value("batch_size", p.batch_size);
      p.enabled = s.value("enabled", true);
      c.stages.push_back(p);
    }
  }
  if (j.contains("folds")) {
    const auto& f = j.at("folds");
    c.folds.count = f.value("count", c.folds.count);
    c.folds.test_fraction = f.value("test_fraction", c.folds.test_fraction);
    c.folds.seed = f.value("seed", c.folds.seed);
  }
  if (j.contains("probe")) {
    c.probe.lambda = j.at("probe").value("lambda", c.probe.lambda);
    c.probe.iterations = j.at("probe").value("iterations", c.probe.iterations);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string TrainingConfig::digest() const { return fnv1a64_hex(to_json().dump()); }

TrainingConfig TrainingConfig::three_stage(bool label, std::optional<LossKind> rep_loss, bool fracture,
                                           std::array<int, 3> epochs) {
  TrainingConfig c;
  c.stages = {{Stage::LabelPretrain, LossKind::Contrastive, epochs[0], 32, label},
              {Stage::RepresentationLearn, rep_loss.value_or(LossKind::Grading), epochs[1], 32, rep_loss.has_value()},
              {Stage::FractureTrain, LossKind::CrossEntropy, epochs[2], 32, fracture}};
  return c;
}

NetworkConfig desk_network() {
  NetworkConfig n;
  n.input_size = 32;
  n.conv_channels = {4, 8, 16, 16};
  n.linear_dims = {32, 16, 8};
  return n;
}

PhantomConfig desk_phantom() {
  PhantomConfig p;
  p.patch_size = 32;
  return p;
}

nlohmann::json RunRecord::to_json() const {
  return {{"stage", stage_name(stage)},
          {"loss", loss_name(loss)},
          {"epoch_losses", epoch_losses},
          {"config_digest", config_digest},
          {"seed", seed},
          {"wall_seconds", wall_seconds},
          {"checkpoint", checkpoint}};
}

// ---------------------------------------------------------------- data

Tensor2<float> make_batch(const Dataset& dataset, std::span<const std::size_t> ids) {
  if (ids.empty()) throw std::invalid_argument("empty batch");
  const auto& first = dataset.samples.at(ids[0]).patch;
  const Eigen::Index h = first.image.rows(), w = first.image.cols();
  const Eigen::Index per = h * w;
  Tensor2<float> x(2, per * static_cast<Eigen::Index>(ids.size()));
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const Patch& p = dataset.samples.at(ids[n]).patch;
    if (p.image.rows() != h || p.image.cols() != w) throw std::invalid_argument("patches differ in size");
    // Row-major images flatten to (row, col) order, matching the map layout.
    x.row(0).segment(n * per, per) = Eigen::Map<const Eigen::RowVectorXf>(p.image.data(), per);
    x.row(1).segment(n * per, per) = Eigen::Map<const Eigen::RowVectorXf>(p.heatmap.data(), per);
  }
  return x;
}

std::vector<int> binary_targets(std::span<const Grade> grades) {
  std::vector<int> out;
  out.reserve(grades.size());
  for (Grade g : grades) out.push_back(is_fractured(g) ? 1 : 0);
  return out;
}

std::vector<int> label_targets(std::span<const Region> regions) {
  std::vector<int> out;
  out.reserve(regions.size());
  for (Region r : regions) out.push_back(static_cast<int>(r));
  return out;
}

// ---------------------------------------------------------------- training

RunRecord run_stage(Model& model, const StagePlan& plan, const Dataset& dataset,
                    std::span<const std::size_t> train_ids, std::uint64_t seed, const TrainingConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  if (train_ids.empty()) throw std::invalid_argument("empty training split");
  config.margins.validate();
  if (plan.stage == Stage::FractureTrain) {
    if (plan.loss != LossKind::CrossEntropy) throw std::invalid_argument("fracture stage trains with cross_entropy");
    if (model.head() != Head::Classifier) model.swap_head(Head::Classifier, seed);
  } else if (model.head() != Head::Embedding) {
    throw std::invalid_argument("stage '" + stage_name(plan.stage) + "' needs the 8-d embedding head");
  }

  std::vector<Grade> grades;
  std::vector<Region> regions;
  for (std::size_t id : train_ids) {
    grades.push_back(dataset.samples.at(id).grade);
    regions.push_back(dataset.samples.at(id).region);
  }
  const std::vector<int> binary = binary_targets(grades);
  const std::vector<int> classes = plan.stage == Stage::LabelPretrain ? label_targets(regions) : binary;
  if (plan.loss == LossKind::CrossEntropy &&
      std::all_of(binary.begin(), binary.end(), [&](int b) { return b == binary[0]; }))
    throw std::invalid_argument("single-class training split refused for cross_entropy");

  RunRecord record;
  record.stage = plan.stage;
  record.loss = plan.loss;
  record.seed = seed;
  record.config_digest = config.digest();

  const Mode entry_mode = model.mode();
  model.set_mode(Mode::Train);
  Adam<float> adam(config.adam);
  const std::size_t n = train_ids.size();
  const std::size_t bs = static_cast<std::size_t>(plan.batch_size);

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    const std::uint64_t es = seed + static_cast<std::uint64_t>(epoch);
    // Each tuple is a fixed-size group of local indices; the loss callback
    // reads its outputs from consecutive columns.
    std::size_t arity = 0;
    std::vector<std::size_t> members;
    std::vector<int> tags;  // anchor class, similarity flag or class label
    switch (plan.loss) {
      case LossKind::Grading: {
        arity = 4;
        for (const auto& q : mine_quadruplets(grades, n, es)) {
          members.insert(members.end(), {q.idx_g0, q.idx_g2, q.idx_g3, q.idx_anchor});
          tags.push_back(static_cast<int>(q.anchor_class));
        }
        break;
      }
      case LossKind::Triplet: {
        arity = 3;
        for (const auto& t : mine_triplets(classes, n, es)) {
          members.insert(members.end(), {t.anchor, t.positive, t.negative});
          tags.push_back(0);
        }
        break;
      }
      case LossKind::Contrastive: {
        arity = 2;
        for (const auto& p : mine_pairs(classes, n, config.similar_fraction, es)) {
          members.insert(members.end(), {p.a, p.b});
          tags.push_back(p.similar ? 1 : 0);
        }
        break;
      }
      case LossKind::CrossEntropy: {
        arity = 1;
        members.resize(n);
        std::iota(members.begin(), members.end(), std::size_t{0});
        std::mt19937_64 rng(es);
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i : members) tags.push_back(binary[i]);
        break;
      }
    }

    const std::size_t tuples = tags.size();
    double epoch_total = 0;
    std::size_t counted = 0;
    for (std::size_t b0 = 0; b0 < tuples; b0 += bs) {
      const std::size_t b1 = std::min(tuples, b0 + bs);
      // A single-sample batch has no batch statistics to normalize with.
      if ((b1 - b0) * arity < 2) break;
      std::vector<std::size_t> ids;
      for (std::size_t t = b0 * arity; t < b1 * arity; ++t) ids.push_back(train_ids[members[t]]);
      const Tensor2<float> out = model.forward(make_batch(dataset, ids));
      Tensor2<float> upstream = Tensor2<float>::Zero(out.rows(), out.cols());
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      double batch_total = 0;
      for (std::size_t t = b0; t < b1; ++t) {
        const auto c = static_cast<Eigen::Index>((t - b0) * arity);
        LossValue<double> lv;
        switch (plan.loss) {
          case LossKind::Grading:
            lv = grading_loss<double>(column(out, c), column(out, c + 1), column(out, c + 2), column(out, c + 3),
                                      static_cast<Grade>(tags[t]), config.margins, config.clustering);
            break;
          case LossKind::Triplet:
            lv = triplet_loss<double>(column(out, c), column(out, c + 1), column(out, c + 2), config.triplet_margin);
            break;
          case LossKind::Contrastive:
            lv = contrastive_loss<double>(column(out, c), column(out, c + 1), tags[t] == 1, config.contrastive_margin);
            break;
          case LossKind::CrossEntropy:
            lv = cross_entropy<double>(column(out, c), tags[t]);
            break;
        }
        if (!std::isfinite(lv.total)) {
          std::ostringstream msg;
          msg << stage_name(plan.stage) << " stage diverged: non-finite " << loss_name(plan.loss) << " loss at epoch "
              << epoch << ", tuple " << t;
          throw std::runtime_error(msg.str());
        }
        batch_total += lv.total;
        for (std::size_t k = 0; k < lv.gradients.size(); ++k)
          upstream.col(c + static_cast<Eigen::Index>(k)) += (lv.gradients[k] * scale).cast<float>();
      }
      model.backward(upstream);
      adam.step(model);
      epoch_total += batch_total;
      counted += b1 - b0;
    }
    record.epoch_losses.push_back(counted ? epoch_total / static_cast<double>(counted) : 0.0);
  }

  model.set_mode(entry_mode);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

PipelineResult run_pipeline(const TrainingConfig& config, const Dataset& dataset, const FoldSplit& fold,
                            const StageCallback& on_stage_end) {
  config.validate();
  if (fold.train_ids.empty() || fold.test_ids.empty()) throw std::invalid_argument("fold has an empty split");
  for (std::size_t id : fold.train_ids)
    if (id >= dataset.samples.size()) throw std::invalid_argument("fold references sample beyond the dataset");
  for (std::size_t id : fold.test_ids)
    if (id >= dataset.samples.size()) throw std::invalid_argument("fold references sample beyond the dataset");

  PipelineResult result{Model(config.network, mix_seed(config.seed, static_cast<std::uint64_t>(fold.fold_id))), {}, {}};
  bool classified = false;
  for (std::size_t k = 0; k < config.stages.size(); ++k) {
    const StagePlan& plan = config.stages[k];
    if (!plan.enabled) continue;
    const std::uint64_t seed = mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(fold.fold_id)), 101 + k);
    RunRecord rec = run_stage(result.model, plan, dataset, fold.train_ids, seed, config);
    classified = classified || plan.stage == Stage::FractureTrain;
    if (on_stage_end) on_stage_end(plan, result.model, rec);
    result.records.push_back(std::move(rec));
  }
  result.model.set_mode(Mode::Eval);
  if (classified)
    result.metrics = evaluate_classifier(result.model, dataset, fold);
  else
    result.metrics = evaluate_probe(result.model, dataset, fold, config.probe, mix_seed(config.seed, 0x9e));
  return result;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace gradeloss
