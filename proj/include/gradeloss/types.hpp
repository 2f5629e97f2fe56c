#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gradeloss {

// Genant grades kept by the toolkit. Grade 1 is not representable.
enum class Grade : std::uint8_t { G0 = 0, G2 = 2, G3 = 3 };

// Shape-similarity groups of thoraco-lumbar vertebrae.
enum class Region : std::uint8_t { T1_T5 = 0, T6_T9 = 1, T10_T12 = 2, L1_L4 = 3, L5 = 4 };

inline constexpr std::array<Grade, 3> kGrades{Grade::G0, Grade::G2, Grade::G3};
inline constexpr std::array<Region, 5> kRegions{Region::T1_T5, Region::T6_T9, Region::T10_T12,
                                                Region::L1_L4, Region::L5};

/// Position of a grade in kGrades (G0 -> 0, G2 -> 1, G3 -> 2).
constexpr int grade_slot(Grade g) {
  switch (g) {
    case Grade::G0: return 0;
    case Grade::G2: return 1;
    case Grade::G3: return 2;
  }
  return -1;
}

constexpr int grade_value(Grade g) { return static_cast<int>(g); }

inline Grade grade_from_value(int v) {
  switch (v) {
    case 0: return Grade::G0;
    case 2: return Grade::G2;
    case 3: return Grade::G3;
    default: throw std::invalid_argument("invalid grade value " + std::to_string(v));
  }
}

constexpr bool is_fractured(Grade g) { return g != Grade::G0; }

inline std::string_view grade_name(Grade g) {
  switch (g) {
    case Grade::G0: return "G0";
    case Grade::G2: return "G2";
    case Grade::G3: return "G3";
  }
  return "?";
}

inline Grade parse_grade(std::string_view s) {
  if (s == "G0") return Grade::G0;
  if (s == "G2") return Grade::G2;
  if (s == "G3") return Grade::G3;
  throw std::invalid_argument("unknown grade '" + std::string(s) + "'");
}

inline std::string_view region_name(Region r) {
  switch (r) {
    case Region::T1_T5: return "T1_T5";
    case Region::T6_T9: return "T6_T9";
    case Region::T10_T12: return "T10_T12";
    case Region::L1_L4: return "L1_L4";
    case Region::L5: return "L5";
  }
  return "?";
}

inline Region parse_region(std::string_view s) {
  for (Region r : kRegions)
    if (region_name(r) == s) return r;
  throw std::invalid_argument("unknown region '" + std::string(s) + "'");
}

/// Region group of a thoraco-lumbar vertebra given its index 0..16 (T1..L5).
inline Region region_of_level(int level) {
  if (level < 0 || level > 16) throw std::invalid_argument("vertebra level out of T1..L5");
  if (level <= 4) return Region::T1_T5;
  if (level <= 8) return Region::T6_T9;
  if (level <= 11) return Region::T10_T12;
  if (level <= 15) return Region::L1_L4;
  return Region::L5;
}

inline std::string level_name(int level) {
  if (level < 0 || level > 16) throw std::invalid_argument("vertebra level out of T1..L5");
  return level < 12 ? "T" + std::to_string(level + 1) : "L" + std::to_string(level - 11);
}

// splitmix64 finalizer, used to derive independent per-item seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gradeloss
