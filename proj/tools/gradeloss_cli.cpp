// gradeloss: synthetic fracture-grade data generation, staged training,
// evaluation and embedding projection.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gradeloss/checkpoint.hpp"
#include "gradeloss/eval.hpp"
#include "gradeloss/pipeline.hpp"
#include "gradeloss/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace gradeloss;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int jobs = 1;
  int verbosity = 0;
};

std::mutex log_mutex;

void log(const Globals& g, int level, const std::string& msg) {
  if (g.verbosity < level) return;
  std::lock_guard lock(log_mutex);
  std::cerr << "[gradeloss] " << msg << '\n';
}

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  if (!fs::exists(g.config_path)) throw std::runtime_error("config file " + g.config_path + " not found");
  return json::parse(read_file_bytes(g.config_path));
}

fs::path prepare_out(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

void write_json(const fs::path& path, const json& j) { write_file_bytes(path, j.dump(2) + "\n"); }

std::string fold_dir_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "fold_%02d", k);
  return buf;
}

PhantomConfig phantom_preset(const std::string& name) {
  if (name == "paper") return PhantomConfig{};
  if (name == "desk") return desk_phantom();
  throw std::invalid_argument("unknown phantom preset '" + name + "' (paper or desk)");
}

NetworkConfig network_for(int patch_size) {
  if (patch_size == 112) return NetworkConfig::paper();
  NetworkConfig n = desk_network();
  n.input_size = patch_size;
  return n;
}

void print_table(const std::string& title, const std::vector<std::pair<std::string, FoldSummary>>& rows) {
  std::cout << title << '\n';
  std::cout << std::left << std::setw(34) << "Setup" << std::right << std::setw(16) << "SN" << std::setw(16) << "SP"
            << std::setw(16) << "F1" << '\n';
  auto cell = [](double m, double s) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(1) << 100 * m << " +- " << 100 * s;
    return o.str();
  };
  for (const auto& [name, s] : rows)
    std::cout << std::left << std::setw(34) << name << std::right << std::setw(16)
              << cell(s.mean_sensitivity, s.std_sensitivity) << std::setw(16)
              << cell(s.mean_specificity, s.std_specificity) << std::setw(16) << cell(s.mean_f1, s.std_f1) << '\n';
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string preset = "paper-ratio";
  double scale = 1.0;
  std::optional<int> count;
  std::string phantom = "paper";
};

int cmd_gen(const Globals& g, const GenArgs& a) {
  const json cfg = load_config(g);
  PhantomConfig pc = phantom_preset(a.phantom);
  if (cfg.contains("phantom")) {
    json merged = pc.to_json();
    merged.merge_patch(cfg.at("phantom"));
    pc = PhantomConfig::from_json(merged);
  }
  const std::uint64_t seed = g.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  pc.seed = seed;
  pc.validate();

  CountTable counts{};
  std::string preset = a.preset;
  if (a.count) {
    if (*a.count <= 0) throw std::invalid_argument("--count must be positive");
    for (auto& row : counts) row.fill(*a.count);
    preset = "balanced";
  } else if (preset == "paper-ratio") {
    counts = paper_ratio_counts(a.scale);
  } else {
    throw std::invalid_argument("unknown preset '" + a.preset + "' (paper-ratio, or use --count)");
  }

  const fs::path out = prepare_out(g);
  log(g, 1, "generating dataset into " + out.string());
  const Dataset ds = generate_dataset(pc, counts, seed);
  const std::string digest = write_dataset(out, ds);
  json counts_json = json::array();
  for (const auto& row : counts) counts_json.push_back(row);
  write_json(out / "run.json", {{"command", "gen"},
                                {"seed", seed},
                                {"preset", preset},
                                {"scale", a.scale},
                                {"counts", counts_json},
                                {"phantom", pc.to_json()},
                                {"digest", digest}});
  std::array<int, 3> totals{};
  for (const auto& s : ds.samples) ++totals[grade_slot(s.grade)];
  std::cout << "samples " << ds.samples.size() << " (G0 " << totals[0] << ", G2 " << totals[1] << ", G3 " << totals[2]
            << ")\n";
  std::cout << "digest " << digest << '\n';
  return 0;
}

// ---------------------------------------------------------------- reformat

struct ReformatArgs {
  int vertebrae = 17;
  double curvature = 0.3;
  std::vector<std::string> fractures;  // "k:G3"
  int pad = 40;
  int jitter = 0;
};

int cmd_reformat(const Globals& g, const ReformatArgs& a) {
  const json cfg = load_config(g);
  PhantomConfig pc;
  if (cfg.contains("phantom")) {
    json merged = pc.to_json();
    merged.merge_patch(cfg.at("phantom"));
    pc = PhantomConfig::from_json(merged);
  }
  const std::uint64_t seed = g.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  pc.seed = seed;
  std::vector<Grade> grades(static_cast<std::size_t>(std::max(a.vertebrae, 0)), Grade::G0);
  for (const auto& f : a.fractures) {
    const auto colon = f.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("--fracture expects index:grade, e.g. 12:G3");
    const int k = std::stoi(f.substr(0, colon));
    if (k < 0 || k >= a.vertebrae) throw std::invalid_argument("--fracture index out of range: " + f);
    grades[static_cast<std::size_t>(k)] = parse_grade(f.substr(colon + 1));
  }

  const SpineVolume vol = generate_spine_volume(pc, a.vertebrae, a.curvature, grades, seed);
  const Reformation ref = reformat_curved(vol, a.pad);
  const fs::path out = prepare_out(g);
  write_file_bytes(out / "volume.vvol", encode_vvol(vol));
  write_vpat(out / "reformation.vpat", {&ref.grid});
  fs::create_directories(out / "patches");
  json cents = json::array();
  std::mt19937_64 rng(mix_seed(seed, 0x7e));
  std::uniform_int_distribution<int> jd(-a.jitter, a.jitter);
  for (std::size_t k = 0; k < ref.centroids.size(); ++k) {
    const std::array<int, 2> jit = a.jitter > 0 ? std::array<int, 2>{jd(rng), jd(rng)} : std::array<int, 2>{0, 0};
    const Patch p = extract_patch(ref.grid, ref.centroids[k], pc.heatmap_sigma_mm, 112, jit);
    const std::string file = "patches/" + vol.centroids[k].label + ".vpat";
    write_vpat(out / file, {&p.image, &p.heatmap});
    cents.push_back({{"label", vol.centroids[k].label},
                     {"grade", grade_name(grades[k])},
                     {"row", ref.centroids[k].row},
                     {"col", ref.centroids[k].col},
                     {"arc_mm", ref.arc_positions[k]},
                     {"jitter", jit},
                     {"patch", file}});
  }
  write_json(out / "reformation.json", {{"rows", ref.grid.rows()},
                                        {"cols", ref.grid.cols()},
                                        {"pad_mm", ref.pad_mm},
                                        {"out_of_bounds", ref.out_of_bounds},
                                        {"centroids", cents}});
  write_json(out / "run.json", {{"command", "reformat"},
                                {"seed", seed},
                                {"vertebrae", a.vertebrae},
                                {"curvature", a.curvature},
                                {"fractures", a.fractures},
                                {"pad_mm", a.pad},
                                {"jitter", a.jitter},
                                {"phantom", pc.to_json()}});
  std::cout << "reformation " << ref.grid.rows() << "x" << ref.grid.cols() << ", " << ref.centroids.size()
            << " centroids, " << ref.out_of_bounds << " out-of-bounds samples\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::optional<std::string> stages;
  std::optional<int> folds;
  std::vector<int> epochs;
  std::optional<double> lr;
};

std::vector<StagePlan> parse_stage_list(const std::string& list, const std::vector<int>& epochs) {
  std::vector<StagePlan> plans;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    StagePlan p;
    if (tok == "label") p = {Stage::LabelPretrain, LossKind::Contrastive, 30, 32, true};
    else if (tok == "label-triplet") p = {Stage::LabelPretrain, LossKind::Triplet, 30, 32, true};
    else if (tok == "grading") p = {Stage::RepresentationLearn, LossKind::Grading, 30, 32, true};
    else if (tok == "triplet") p = {Stage::RepresentationLearn, LossKind::Triplet, 30, 32, true};
    else if (tok == "contrastive") p = {Stage::RepresentationLearn, LossKind::Contrastive, 30, 32, true};
    else if (tok == "fracture") p = {Stage::FractureTrain, LossKind::CrossEntropy, 40, 32, true};
    else
      throw std::invalid_argument("unknown stage '" + tok +
                                  "' (label, label-triplet, grading, triplet, contrastive, fracture)");
    plans.push_back(p);
  }
  if (plans.empty()) throw std::invalid_argument("--stages is empty");
  if (!epochs.empty()) {
    if (epochs.size() != plans.size()) throw std::invalid_argument("--epochs needs one value per stage");
    for (std::size_t i = 0; i < plans.size(); ++i) plans[i].epochs = epochs[i];
  }
  return plans;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const json cfg = load_config(g);
  const std::string data = !a.data.empty() ? a.data : cfg.value("data", std::string());
  if (data.empty()) throw std::invalid_argument("no dataset given (--data DIR or \"data\" in the config file)");
  const Dataset ds = read_dataset(data);
  if (ds.samples.empty()) throw std::runtime_error("dataset at " + data + " is empty");

  TrainingConfig tc;
  tc.network = network_for(static_cast<int>(ds.samples.front().patch.image.rows()));
  if (cfg.contains("training")) {
    json merged = tc.to_json();
    merged.merge_patch(cfg.at("training"));
    tc = TrainingConfig::from_json(merged);
  }
  const bool config_stages = cfg.contains("training") && cfg.at("training").contains("stages");
  const std::string stage_list = a.stages.value_or("label,grading,fracture");
  if (a.stages || !config_stages) tc.stages = parse_stage_list(stage_list, a.epochs);
  if (g.seed) {
    tc.seed = *g.seed;
    tc.folds.seed = *g.seed;
  }
  if (a.folds) tc.folds.count = *a.folds;
  if (a.lr) tc.adam.learning_rate = *a.lr;
  tc.validate();

  const fs::path out = prepare_out(g);
  const std::vector<Grade> grades = ds.grades();
  const auto folds = make_folds(grades, tc.folds.count, tc.folds.test_fraction, tc.folds.seed);
  write_file_bytes(out / "folds.json", folds_to_json(folds, tc.folds.seed));
  write_json(out / "run.json", {{"command", "train"},
                                {"data", fs::absolute(data).string()},
                                {"dataset_digest", dataset_digest(ds)},
                                {"stages", stage_list},
                                {"training", tc.to_json()},
                                {"jobs", g.jobs}});

  std::vector<Metrics> metrics(folds.size());
  parallel_for(folds.size(), g.jobs, [&](std::size_t k) {
    const fs::path dir = out / fold_dir_name(folds[k].fold_id);
    fs::create_directories(dir);
    log(g, 1, fold_dir_name(folds[k].fold_id) + ": training on " + std::to_string(folds[k].train_ids.size()) +
                  " samples");
    auto result = run_pipeline(tc, ds, folds[k], [&](const StagePlan& plan, Model& m, RunRecord& rec) {
      const fs::path ck = dir / (stage_name(plan.stage) + ".gmck");
      save_checkpoint(m, ck);
      rec.checkpoint = ck.filename().string();
      std::ostringstream msg;
      msg << fold_dir_name(folds[k].fold_id) << ": " << stage_name(plan.stage) << " (" << loss_name(plan.loss)
          << ") final loss " << (rec.epoch_losses.empty() ? 0.0 : rec.epoch_losses.back());
      log(g, 1, msg.str());
    });
    json records = json::array();
    for (const auto& r : result.records) records.push_back(r.to_json());
    write_json(dir / "record.json", {{"fold", folds[k].fold_id}, {"stages", records}});
    write_json(dir / "metrics.json", result.metrics.to_json());
    metrics[k] = result.metrics;
  });

  const FoldSummary summary = summarize(metrics);
  write_json(out / "metrics.json", summary.to_json());
  print_table("Training run (" + stage_list + "), " + std::to_string(folds.size()) + " folds", {{stage_list, summary}});
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> runs;
  std::string protocol = "probe";
  std::string stage;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  if (a.runs.empty()) throw std::invalid_argument("--run DIR is required (output directory of `gradeloss train`)");
  if (a.protocol != "probe" && a.protocol != "classify")
    throw std::invalid_argument("--protocol must be probe or classify");
  const fs::path out = prepare_out(g);
  std::vector<std::pair<std::string, FoldSummary>> rows;
  json rows_json = json::array();
  for (const auto& run : a.runs) {
    const fs::path dir(run);
    if (!fs::exists(dir / "run.json")) throw std::runtime_error(run + " is not a training run (run.json missing)");
    const json rj = json::parse(read_file_bytes(dir / "run.json"));
    const TrainingConfig tc = TrainingConfig::from_json(rj.at("training"));
    const Dataset ds = read_dataset(rj.at("data").get<std::string>());
    if (dataset_digest(ds) != rj.at("dataset_digest").get<std::string>())
      throw std::runtime_error("dataset changed since " + run + " was trained");
    const auto folds = folds_from_json(read_file_bytes(dir / "folds.json"));

    std::string stage = a.stage;
    if (stage.empty()) {
      stage = a.protocol == "classify" ? "fracture" : "representation";
      if (a.protocol == "probe") {
        bool has_rep = false;
        for (const auto& p : tc.stages) has_rep = has_rep || (p.enabled && p.stage == Stage::RepresentationLearn);
        if (!has_rep) stage = "label";
      }
    }
    std::string setup;
    for (const auto& p : tc.stages)
      if (p.enabled) setup += (setup.empty() ? "" : " -> ") + stage_name(p.stage) + ":" + loss_name(p.loss);

    std::vector<Metrics> per(folds.size());
    parallel_for(folds.size(), g.jobs, [&](std::size_t k) {
      const fs::path ck = dir / fold_dir_name(folds[k].fold_id) / (stage + ".gmck");
      if (!fs::exists(ck)) throw std::runtime_error("checkpoint " + ck.string() + " missing");
      const Model m = load_checkpoint(ck);
      per[k] = a.protocol == "classify"
                   ? evaluate_classifier(m, ds, folds[k])
                   : evaluate_probe(m, ds, folds[k], tc.probe, mix_seed(tc.seed, 0x9e));
      log(g, 1, run + " " + fold_dir_name(folds[k].fold_id) + ": f1 " + std::to_string(per[k].f1));
    });
    FoldSummary s = summarize(per);
    rows_json.push_back({{"config_digest", tc.digest()},
                         {"setup", setup},
                         {"checkpoint_stage", stage},
                         {"summary", s.to_json()}});
    rows.emplace_back(setup, std::move(s));
  }
  write_json(out / "eval.json", {{"protocol", a.protocol}, {"rows", rows_json}});
  write_json(out / "run.json", {{"command", "eval"}, {"protocol", a.protocol}, {"runs", a.runs}, {"stage", a.stage}});
  print_table(a.protocol == "probe" ? "Linear probe on frozen embeddings" : "Fracture classification", rows);
  return 0;
}

// ---------------------------------------------------------------- project

struct ProjectArgs {
  std::string data;
  std::string checkpoint;
  std::string title = "embedding projection";
};

int cmd_project(const Globals& g, const ProjectArgs& a) {
  if (a.data.empty() || a.checkpoint.empty()) throw std::invalid_argument("--data and --checkpoint are required");
  if (!fs::exists(a.checkpoint)) throw std::runtime_error("checkpoint " + a.checkpoint + " missing");
  const Dataset ds = read_dataset(a.data);
  Model m = load_checkpoint(a.checkpoint);
  m.set_mode(Mode::Eval);
  std::vector<std::size_t> ids(ds.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const Eigen::MatrixXd pts = project_2d(embed(m, ds, ids));
  std::vector<std::int64_t> sample_ids;
  for (const auto& s : ds.samples) sample_ids.push_back(s.id);
  const auto grades = ds.grades();
  const fs::path out = prepare_out(g);
  write_file_bytes(out / "projection.csv", projection_csv(pts, sample_ids, grades));
  write_file_bytes(out / "projection.svg", scatter_svg(pts, grades, a.title));
  write_json(out / "run.json", {{"command", "project"}, {"data", a.data}, {"checkpoint", a.checkpoint}});
  std::cout << "projected " << pts.rows() << " embeddings to " << (out / "projection.svg").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Layer buffers are large and short-lived; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Grade-aware metric learning for vertebral fracture detection on synthetic data"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Seed; overrides the configuration file");
  app.add_option("--out", g.out, "Output directory (created if absent)");
  app.add_option("--jobs", g.jobs, "Folds processed in parallel")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbosity, "Log progress to stderr (repeat for more)");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic patch dataset");
  c_gen->add_option("--preset", gen.preset, "Class-count preset (paper-ratio)");
  c_gen->add_option("--scale", gen.scale, "Scale of the paper-ratio preset (1.0 = 1283 samples)");
  c_gen->add_option("--count", gen.count, "Samples per grade and region instead of a preset");
  c_gen->add_option("--phantom", gen.phantom, "Phantom preset: paper (112 px) or desk (32 px)");

  ReformatArgs ref;
  auto* c_ref = app.add_subcommand("reformat", "Build a spine volume, reformat it along the spine and cut patches");
  c_ref->add_option("--vertebrae", ref.vertebrae, "Number of vertebrae, ending at L5");
  c_ref->add_option("--curvature", ref.curvature, "Spine curvature (0 = straight)");
  c_ref->add_option("--fracture", ref.fractures, "Fractured vertebra as index:grade, repeatable");
  c_ref->add_option("--pad", ref.pad, "Rows of padding before the first and after the last centroid");
  c_ref->add_option("--jitter", ref.jitter, "Maximum patch centring jitter in pixels");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Run the staged training pipeline over stratified folds");
  c_train->add_option("--data", tr.data, "Dataset directory written by `gen`");
  c_train->add_option("--stages", tr.stages,
                      "Comma-separated stages: label|label-triplet, grading|triplet|contrastive, fracture");
  c_train->add_option("--folds", tr.folds, "Number of folds");
  c_train->add_option("--epochs", tr.epochs, "Epochs per listed stage")->delimiter(',');
  c_train->add_option("--lr", tr.lr, "Adam learning rate");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score trained runs (probe: frozen embeddings, classify: logits)");
  c_eval->add_option("--run", ev.runs, "Training run directory, repeatable (one table row each)");
  c_eval->add_option("--protocol", ev.protocol, "probe or classify");
  c_eval->add_option("--stage", ev.stage, "Checkpoint stage to load (label, representation, fracture)");

  ProjectArgs pj;
  auto* c_proj = app.add_subcommand("project", "PCA projection of embeddings to CSV and SVG");
  c_proj->add_option("--data", pj.data, "Dataset directory");
  c_proj->add_option("--checkpoint", pj.checkpoint, "Model checkpoint (.gmck)");
  c_proj->add_option("--title", pj.title, "Plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (c_gen->parsed()) return cmd_gen(g, gen);
    if (c_ref->parsed()) return cmd_reformat(g, ref);
    if (c_train->parsed()) return cmd_train(g, tr);
    if (c_eval->parsed()) return cmd_eval(g, ev);
    if (c_proj->parsed()) return cmd_project(g, pj);
  } catch (const std::exception& e) {
    std::cerr << "gradeloss: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
