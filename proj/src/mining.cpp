#include "gradeloss/mining.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace gradeloss {

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::map<int, std::vector<std::size_t>> group_by_class(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  return groups;
}

struct ClassIndex {
  std::map<int, std::vector<std::size_t>> groups;
  std::vector<std::size_t> eligible;  // samples whose class has another member
};

ClassIndex index_classes(std::span<const int> labels) {
  ClassIndex ci{group_by_class(labels), {}};
  if (ci.groups.size() < 2) throw std::invalid_argument("mining needs at least two classes");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (ci.groups[labels[i]].size() >= 2) ci.eligible.push_back(i);
  if (ci.eligible.empty()) throw std::invalid_argument("no class has two samples to form a positive pair");
  return ci;
}

std::size_t pick_other_class(Rng& rng, std::span<const int> labels, int cls, std::size_t n_other) {
  std::size_t k = pick(rng, n_other);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) continue;
    if (k-- == 0) return i;
  }
  throw std::logic_error("pick_other_class out of range");
}

std::size_t pick_same_class(Rng& rng, const std::vector<std::size_t>& members, std::size_t self) {
  // Uniform over the class without `self`.
  std::size_t k = pick(rng, members.size() - 1);
  const auto pos = static_cast<std::size_t>(std::find(members.begin(), members.end(), self) - members.begin());
  if (k >= pos) ++k;
  return members[k];
}

}  // namespace

std::vector<FoldSplit> make_folds(std::span<const Grade> labels, int n_folds, double test_fraction,
                                  std::uint64_t seed) {
  if (n_folds < 1) throw std::invalid_argument("n_folds must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must lie in (0, 1)");

  std::array<std::vector<std::size_t>, 3> by_grade;
  for (std::size_t i = 0; i < labels.size(); ++i) by_grade[grade_slot(labels[i])].push_back(i);

  std::array<std::size_t, 3> n_test{};
  for (int g = 0; g < 3; ++g) {
    const auto n = by_grade[g].size();
    if (n == 0)
      throw std::invalid_argument("grade " + std::string(grade_name(kGrades[g])) + " has no samples");
    n_test[g] = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test[g] == 0)
      throw std::invalid_argument("test_fraction leaves grade " + std::string(grade_name(kGrades[g])) +
                                  " empty in the test split");
    if (n_test[g] >= n)
      throw std::invalid_argument("test_fraction leaves grade " + std::string(grade_name(kGrades[g])) +
                                  " empty in the training split");
  }

  std::vector<FoldSplit> folds;
  folds.reserve(static_cast<std::size_t>(n_folds));
  for (int k = 0; k < n_folds; ++k) {
    FoldSplit f;
    f.fold_id = k;
    f.seed = mix_seed(seed, static_cast<std::uint64_t>(k));
    Rng rng(f.seed);
    for (int g = 0; g < 3; ++g) {
      auto ids = by_grade[g];
      std::shuffle(ids.begin(), ids.end(), rng);
      f.test_ids.insert(f.test_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test[g]));
      f.train_ids.insert(f.train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test[g]), ids.end());
    }
    std::sort(f.train_ids.begin(), f.train_ids.end());
    std::sort(f.test_ids.begin(), f.test_ids.end());
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Quadruplet> mine_quadruplets(std::span<const Grade> labels, std::size_t count,
                                         std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 3> by_grade;
  for (std::size_t i = 0; i < labels.size(); ++i) by_grade[grade_slot(labels[i])].push_back(i);
  std::vector<int> anchor_slots;
  for (int g = 0; g < 3; ++g) {
    if (by_grade[g].empty())
      throw std::invalid_argument("grade " + std::string(grade_name(kGrades[g])) + " has no samples");
    if (by_grade[g].size() >= 2) anchor_slots.push_back(g);
  }
  if (anchor_slots.empty())
    throw std::invalid_argument("every grade has a single sample; the anchor cannot avoid self-pairing");

  Rng rng(seed);
  std::vector<Quadruplet> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::array<std::size_t, 3> pos{};
    for (int g = 0; g < 3; ++g) pos[g] = pick(rng, by_grade[g].size());
    const int slot = anchor_slots[pick(rng, anchor_slots.size())];
    std::size_t a = pick(rng, by_grade[slot].size() - 1);
    if (a >= pos[slot]) ++a;

    Quadruplet q;
    q.idx_g0 = by_grade[0][pos[0]];
    q.idx_g2 = by_grade[1][pos[1]];
    q.idx_g3 = by_grade[2][pos[2]];
    q.idx_anchor = by_grade[slot][a];
    q.anchor_class = kGrades[slot];
    out.push_back(q);
  }
  return out;
}

std::vector<Triplet> mine_triplets(std::span<const int> labels, std::size_t count, std::uint64_t seed) {
  const ClassIndex ci = index_classes(labels);
  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Triplet t;
    t.anchor = ci.eligible[pick(rng, ci.eligible.size())];
    const int cls = labels[t.anchor];
    const auto& members = ci.groups.at(cls);
    t.positive = pick_same_class(rng, members, t.anchor);
    t.negative = pick_other_class(rng, labels, cls, labels.size() - members.size());
    out.push_back(t);
  }
  return out;
}

std::vector<Pair> mine_pairs(std::span<const int> labels, std::size_t count, double similar_fraction,
                             std::uint64_t seed) {
  if (!(similar_fraction >= 0.0 && similar_fraction <= 1.0))
    throw std::invalid_argument("similar_fraction must lie in [0, 1]");
  const ClassIndex ci = index_classes(labels);
  const auto n_similar = static_cast<std::size_t>(std::llround(similar_fraction * static_cast<double>(count)));

  Rng rng(seed);
  std::vector<bool> flags(count, false);
  std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(n_similar), true);
  std::shuffle(flags.begin(), flags.end(), rng);

  std::vector<Pair> out;
  out.reserve(count);
  for (bool similar : flags) {
    Pair p;
    p.similar = similar;
    if (similar) {
      p.a = ci.eligible[pick(rng, ci.eligible.size())];
      p.b = pick_same_class(rng, ci.groups.at(labels[p.a]), p.a);
    } else {
      p.a = pick(rng, labels.size());
      const int cls = labels[p.a];
      p.b = pick_other_class(rng, labels, cls, labels.size() - ci.groups.at(cls).size());
    }
    out.push_back(p);
  }
  return out;
}

std::string folds_to_json(std::span<const FoldSplit> folds, std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds) {
    j["folds"].push_back({{"fold_id", f.fold_id},
                          {"seed", f.seed},
                          {"train_ids", f.train_ids},
                          {"test_ids", f.test_ids}});
  }
  return j.dump(1);
}

std::vector<FoldSplit> folds_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::vector<FoldSplit> folds;
  for (const auto& jf : j.at("folds")) {
    FoldSplit f;
    f.fold_id = jf.at("fold_id").get<int>();
    f.seed = jf.value("seed", std::uint64_t{0});
    f.train_ids = jf.at("train_ids").get<std::vector<std::size_t>>();
    f.test_ids = jf.at("test_ids").get<std::vector<std::size_t>>();
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace gradeloss
