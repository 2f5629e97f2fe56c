#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeloss/layers.hpp"
#include "gradeloss/types.hpp"

namespace gradeloss {

using Image = Tensor2<float>;

/// Closed interval [lo, hi].
struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

enum class Deformity { None, Wedge, Biconcave, Crush };

std::string deformity_name(Deformity d);

/// Synthetic vertebra generator settings. Lengths are in mm; a patch spans
/// field_mm, so patch_size sets the pixel spacing (112 over 112 mm -> 1 mm).
struct PhantomConfig {
  int patch_size = 112;
  double field_mm = 112;
  std::array<Range, 5> body_width{{{22, 28}, {27, 33}, {32, 38}, {38, 46}, {42, 50}}};
  std::array<Range, 5> body_height{{{14, 18}, {17, 21}, {20, 24}, {23, 28}, {24, 28}}};
  Range disc_gap{5, 9};
  // Genant height-loss bands (clinical convention): G2 26-40 %, G3 > 40 %.
  Range g2_loss{0.26, 0.40};
  Range g3_loss{0.41, 0.70};
  double wedge_probability = 0.5;
  double crush_probability = 0.0;  // remainder is biconcave
  double noise_amplitude = 0.03;
  double smoothing_px = 0.6;
  bool neighbor_context = true;
  double heatmap_sigma_mm = 8.0;
  int jitter_px = 0;
  std::uint64_t seed = 0;

  double pixel_mm() const { return field_mm / patch_size; }
  void validate() const;
  nlohmann::json to_json() const;
  static PhantomConfig from_json(const nlohmann::json& j);
  /// FNV-1a digest of the canonical JSON form.
  std::string digest() const;
};

/// Per-sample generator draws, kept for auditing and measurement.
struct PatchParams {
  double body_width_mm = 0;
  double body_height_mm = 0;
  double height_loss = 0;
  Deformity deformity = Deformity::None;
  double foreground = 0;
  double background = 0;
  int center_row = 0;  // centroid pixel after jitter
  int center_col = 0;

  nlohmann::json to_json() const;
};

struct Patch {
  Image image;    // intensities in [0, 1]
  Image heatmap;  // exp(-r^2 / 2 sigma^2) around the centroid
};

struct PatchSample {
  Patch patch;
  Grade grade = Grade::G0;
  Region region = Region::T1_T5;
  std::int64_t id = 0;
  PatchParams params;
};

/// Height profile multiplier (1 - loss * shape(u)) at relative anterior to
/// posterior position u in [0, 1].
double height_factor(Deformity d, double loss, double u);

/// Renders one sagittal vertebra patch, deterministic in (config.seed, id).
PatchSample generate_patch(const PhantomConfig& config, Grade grade, Region region, std::int64_t id);

/// Sample counts indexed [grade slot][region].
using CountTable = std::array<std::array<int, 5>, 3>;

/// Grade totals split over regions: healthy by vertebra level frequency,
/// fractures weighted towards the thoraco-lumbar junction.
CountTable paper_ratio_counts(double scale);

struct Dataset {
  std::vector<PatchSample> samples;
  nlohmann::json manifest;

  std::vector<Grade> grades() const;
  std::vector<Region> regions() const;
};

Dataset generate_dataset(const PhantomConfig& config, const CountTable& counts, std::uint64_t seed);

// ---------------------------------------------------------------- volumes

struct Centroid {
  std::string label;
  std::array<double, 3> position{};  // (x, y, z) voxel/mm coordinates
};

/// Axis-aligned box [lo, hi] (inclusive voxel indices, x/y/z).
struct VoxelBox {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
};

/// 1 mm isotropic volume, x (left-right) fastest, then y (anterior to
/// posterior), then z (cranial to caudal).
struct SpineVolume {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  std::vector<float> voxels;
  std::vector<Centroid> centroids;
  std::vector<VoxelBox> body_boxes;  // region each body may occupy

  float at(int x, int y, int z) const {
    return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
  }
  /// Trilinear sample; returns false when outside the voxel grid.
  bool sample(double x, double y, double z, float& out) const;
};

struct VolumeOptions {
  int lateral_size = 128;   // nx and ny
  int axial_margin = 48;    // empty mm above the first and below the last body
  double kyphosis_mm = 30;  // AP bow at curvature 1
  double scoliosis_mm = 15; // LR S-curve at curvature 1
};

/// Stacked vertebral bodies (levels ending at L5) along a curved axis.
SpineVolume generate_spine_volume(const PhantomConfig& config, int n_vertebrae, double curvature,
                                  const std::vector<Grade>& grades, std::uint64_t seed,
                                  const VolumeOptions& options = {});


// ---------------------------------------------------------------- reformation

struct ReformationPoint {
  double row = 0;
  double col = 0;
};

struct Reformation {
  Image grid;                             // rows: arc length, cols: AP offset
  std::vector<ReformationPoint> centroids;
  std::vector<double> arc_positions;      // arc length of each centroid
  int pad_mm = 0;
  std::size_t out_of_bounds = 0;          // samples filled with 0
};

/// Curved planar reformation along a natural cubic spline through the
/// centroids. Rows advance 1 mm in arc length starting pad_mm before the
/// first centroid; columns step 1 mm along the AP axis centred on the spline.
Reformation reformat_curved(const SpineVolume& volume, int pad_mm = 40);

/// 2-channel crop around centroid_rc (plus jitter) with zero padding and a
/// unit-peak Gaussian heatmap of width sigma_px.
Patch extract_patch(const Image& grid, ReformationPoint centroid_rc, double sigma_px, int size = 112,
                    std::array<int, 2> jitter = {0, 0});

}  // namespace gradeloss
