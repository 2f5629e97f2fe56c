#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeloss/backbone.hpp"
#include "gradeloss/eval.hpp"
#include "gradeloss/losses.hpp"
#include "gradeloss/mining.hpp"
#include "gradeloss/optimizer.hpp"
#include "gradeloss/phantom.hpp"

namespace gradeloss {

enum class Stage { LabelPretrain, RepresentationLearn, FractureTrain };
enum class LossKind { Contrastive, Triplet, Grading, CrossEntropy };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);
std::string loss_name(LossKind l);
LossKind parse_loss(const std::string& s);

struct StagePlan {
  Stage stage = Stage::FractureTrain;
  LossKind loss = LossKind::CrossEntropy;
  int epochs = 40;
  int batch_size = 32;
  bool enabled = true;
};

struct FoldOptions {
  int count = 15;
  double test_fraction = 312.0 / 1283.0;
  std::uint64_t seed = 2020;
};

/// Everything that defines a training run; serialized verbatim into run.json.
struct TrainingConfig {
  NetworkConfig network = NetworkConfig::paper();
  AdamConfig adam;
  GradingMargins margins;
  ClusteringMode clustering = ClusteringMode::Textual;
  double contrastive_margin = 1.0;
  double triplet_margin = 1.0;
  double similar_fraction = 0.5;
  std::vector<StagePlan> stages;
  FoldOptions folds;
  ProbeOptions probe;
  std::uint64_t seed = 1;

  /// Enforces stage order, loss/stage compatibility and the margin hierarchy.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
  std::string digest() const;

  /// Label pre-train (contrastive) -> representation (`rep_loss`) -> fracture
  /// train, with `enabled` flags per stage.
  static TrainingConfig three_stage(bool label, std::optional<LossKind> rep_loss, bool fracture,
                                    std::array<int, 3> epochs = {30, 30, 40});
};

/// Reduced network/phantom used for the desk-scale benchmark: 32x32
/// patches (3.5 mm pixels) and a narrow four-stage encoder.
NetworkConfig desk_network();
PhantomConfig desk_phantom();

struct RunRecord {
  Stage stage = Stage::FractureTrain;
  LossKind loss = LossKind::CrossEntropy;
  std::vector<double> epoch_losses;
  std::string config_digest;
  std::uint64_t seed = 0;
  double wall_seconds = 0;
  std::string checkpoint;

  nlohmann::json to_json() const;
};

/// (channels x N*size*size) network input for the given samples.
Tensor2<float> make_batch(const Dataset& dataset, std::span<const std::size_t> ids);

/// Fractured (G2, G3) -> 1, healthy -> 0.
std::vector<int> binary_targets(std::span<const Grade> grades);
/// Region classes T1_T5 = 0 ... L5 = 4.
std::vector<int> label_targets(std::span<const Region> regions);

/// Trains one stage on `train_ids`. Tuples are re-mined every epoch with
/// seed + epoch; an epoch holds as many tuples as there are training
/// samples. Entering FractureTrain swaps in the classifier head.
RunRecord run_stage(Model& model, const StagePlan& plan, const Dataset& dataset,
                    std::span<const std::size_t> train_ids, std::uint64_t seed, const TrainingConfig& config);

struct PipelineResult {
  Model model;
  Metrics metrics;
  std::vector<RunRecord> records;
};

using StageCallback = std::function<void(const StagePlan&, Model&, RunRecord&)>;

/// Runs the enabled stages in order on the fold's training split and scores
/// the test split: classifier argmax when FractureTrain ran, otherwise a
/// linear probe on the embeddings.
PipelineResult run_pipeline(const TrainingConfig& config, const Dataset& dataset, const FoldSplit& fold,
                            const StageCallback& on_stage_end = {});

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace gradeloss
