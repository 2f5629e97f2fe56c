#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gradeloss/types.hpp"

namespace gradeloss {

/// Static (g0, g2, g3) triplet plus a positive anchor of class `anchor_class`.
struct Quadruplet {
  std::size_t idx_g0 = 0;
  std::size_t idx_g2 = 0;
  std::size_t idx_g3 = 0;
  std::size_t idx_anchor = 0;
  Grade anchor_class = Grade::G0;

  bool operator==(const Quadruplet&) const = default;
};

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const Triplet&) const = default;
};

struct Pair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool similar = false;

  bool operator==(const Pair&) const = default;
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
  std::uint64_t seed = 0;

  bool operator==(const FoldSplit&) const = default;
};

/// Stratified random train/test splits. Each grade contributes
/// round(test_fraction * count) samples to the test side; fold k is drawn
/// from a seed derived from (seed, k) only, so folds are independently
/// reproducible. Index lists are sorted.
std::vector<FoldSplit> make_folds(std::span<const Grade> labels, int n_folds, double test_fraction,
                                  std::uint64_t seed);

/// Quadruplets with each static slot drawn uniformly from its grade. The
/// anchor class is uniform over grades holding at least two samples, and the
/// anchor never coincides with the static member of its own class.
std::vector<Quadruplet> mine_quadruplets(std::span<const Grade> labels, std::size_t count,
                                         std::uint64_t seed);

/// Anchor drawn uniformly from samples whose class has a second member;
/// positive from the same class, negative from any other class.
std::vector<Triplet> mine_triplets(std::span<const int> labels, std::size_t count,
                                   std::uint64_t seed);

/// Exactly round(count * similar_fraction) same-class pairs, the rest
/// cross-class, in shuffled order.
std::vector<Pair> mine_pairs(std::span<const int> labels, std::size_t count,
                             double similar_fraction, std::uint64_t seed);

std::string folds_to_json(std::span<const FoldSplit> folds, std::uint64_t seed);
std::vector<FoldSplit> folds_from_json(const std::string& text);

}  // namespace gradeloss
