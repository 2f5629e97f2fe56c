#include "gradeloss/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "gradeloss/tensor_io.hpp"

namespace gradeloss {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }
double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

nlohmann::json range_json(const Range& r) { return {r.lo, r.hi}; }
Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

void check_range(const Range& r, const char* what) {
  if (!(r.lo > 0 && r.hi >= r.lo)) throw std::invalid_argument(std::string("invalid range for ") + what);
}

// Vertebral body drawn in patch millimetres, centre (x, y).
struct Body {
  double x = 0;
  double y = 0;
  double width = 0;
  double height = 0;
  double loss = 0;
  Deformity deformity = Deformity::None;
  double intensity = 0;
};

// Vertical extent of a column through an object at horizontal position x.
struct Span {
  double top = 0;
  double bottom = 0;
  double intensity = 0;
};

void draw_fracture(Rng& rng, const PhantomConfig& c, Grade grade, double& loss, Deformity& deformity) {
  loss = 0;
  deformity = Deformity::None;
  if (grade == Grade::G0) return;
  loss = uniform(rng, grade == Grade::G2 ? c.g2_loss : c.g3_loss);
  const double u = uniform(rng, 0.0, 1.0);
  if (u < c.wedge_probability) deformity = Deformity::Wedge;
  else if (u < c.wedge_probability + c.crush_probability) deformity = Deformity::Crush;
  else deformity = Deformity::Biconcave;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const auto rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  Image tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img(r, std::clamp(c + i, 0, cols - 1));
      tmp(r, c) = static_cast<float>(acc);
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(std::clamp(r + i, 0, rows - 1), c);
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

std::string deformity_name(Deformity d) {
  switch (d) {
    case Deformity::None: return "none";
    case Deformity::Wedge: return "wedge";
    case Deformity::Biconcave: return "biconcave";
    case Deformity::Crush: return "crush";
  }
  return "?";
}

double height_factor(Deformity d, double loss, double u) {
  double shape = 0;
  switch (d) {
    case Deformity::None: shape = 0; break;
    case Deformity::Wedge:
      // Full loss over the anterior fifth, tapering to intact at 80 %.
      shape = u <= 0.2 ? 1.0 : (u >= 0.8 ? 0.0 : (0.8 - u) / 0.6);
      break;
    case Deformity::Biconcave: {
      const double s = std::sin(std::numbers::pi * std::clamp(u, 0.0, 1.0));
      shape = s * s;
      break;
    }
    case Deformity::Crush: shape = 1; break;
  }
  return 1.0 - loss * shape;
}

// ---------------------------------------------------------------- config

void PhantomConfig::validate() const {
  if (patch_size < 8) throw std::invalid_argument("patch_size must be >= 8");
  if (!(field_mm > 0)) throw std::invalid_argument("field_mm must be positive");
  for (int r = 0; r < 5; ++r) {
    check_range(body_width[r], "body_width");
    check_range(body_height[r], "body_height");
  }
  check_range(disc_gap, "disc_gap");
  for (const Range* r : {&g2_loss, &g3_loss})
    if (!(r->lo > 0 && r->hi < 1 && r->lo <= r->hi)) throw std::invalid_argument("height-loss ranges must lie in (0, 1)");
  if (!(g3_loss.lo > g2_loss.hi)) throw std::invalid_argument("G3 height-loss range must lie above the G2 range");
  if (wedge_probability < 0 || crush_probability < 0 || wedge_probability + crush_probability > 1)
    throw std::invalid_argument("deformity probabilities must be nonnegative and sum to <= 1");
  if (noise_amplitude < 0 || smoothing_px < 0) throw std::invalid_argument("noise and smoothing must be nonnegative");
  if (!(heatmap_sigma_mm > 0)) throw std::invalid_argument("heatmap sigma must be positive");
  if (jitter_px < 0 || 2 * jitter_px >= patch_size) throw std::invalid_argument("invalid jitter");
}

nlohmann::json PhantomConfig::to_json() const {
  nlohmann::json widths = nlohmann::json::array(), heights = nlohmann::json::array();
  for (int r = 0; r < 5; ++r) {
    widths.push_back(range_json(body_width[r]));
    heights.push_back(range_json(body_height[r]));
  }
  return {{"patch_size", patch_size},
          {"field_mm", field_mm},
          {"body_width", widths},
          {"body_height", heights},
          {"disc_gap", range_json(disc_gap)},
          {"g2_loss", range_json(g2_loss)},
          {"g3_loss", range_json(g3_loss)},
          {"wedge_probability", wedge_probability},
          {"crush_probability", crush_probability},
          {"noise_amplitude", noise_amplitude},
          {"smoothing_px", smoothing_px},
          {"neighbor_context", neighbor_context},
          {"heatmap_sigma_mm", heatmap_sigma_mm},
          {"jitter_px", jitter_px},
          {"seed", seed}};
}

PhantomConfig PhantomConfig::from_json(const nlohmann::json& j) {
  PhantomConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  c.field_mm = j.value("field_mm", c.field_mm);
  if (j.contains("body_width"))
    for (int r = 0; r < 5; ++r) c.body_width[r] = range_from(j["body_width"].at(r));
  if (j.contains("body_height"))
    for (int r = 0; r < 5; ++r) c.body_height[r] = range_from(j["body_height"].at(r));
  if (j.contains("disc_gap")) c.disc_gap = range_from(j["disc_gap"]);
  if (j.contains("g2_loss")) c.g2_loss = range_from(j["g2_loss"]);
  if (j.contains("g3_loss")) c.g3_loss = range_from(j["g3_loss"]);
  c.wedge_probability = j.value("wedge_probability", c.wedge_probability);
  c.crush_probability = j.value("crush_probability", c.crush_probability);
  c.noise_amplitude = j.value("noise_amplitude", c.noise_amplitude);
  c.smoothing_px = j.value("smoothing_px", c.smoothing_px);
  c.neighbor_context = j.value("neighbor_context", c.neighbor_context);
  c.heatmap_sigma_mm = j.value("heatmap_sigma_mm", c.heatmap_sigma_mm);
  c.jitter_px = j.value("jitter_px", c.jitter_px);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string PhantomConfig::digest() const { return fnv1a64_hex(to_json().dump()); }

nlohmann::json PatchParams::to_json() const {
  return {{"body_width_mm", body_width_mm}, {"body_height_mm", body_height_mm},
          {"height_loss", height_loss},     {"deformity", deformity_name(deformity)},
          {"foreground", foreground},       {"background", background},
          {"center_row", center_row},       {"center_col", center_col}};
}

// ---------------------------------------------------------------- patches

PatchSample generate_patch(const PhantomConfig& config, Grade grade, Region region, std::int64_t id) {
  config.validate();
  Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(id)));
  const int r = static_cast<int>(region);
  const int size = config.patch_size;
  const double pm = config.pixel_mm();

  PatchSample out;
  out.grade = grade;
  out.region = region;
  out.id = id;
  auto& prm = out.params;

  Body voi;
  voi.width = uniform(rng, config.body_width[r]);
  voi.height = uniform(rng, config.body_height[r]);
  draw_fracture(rng, config, grade, voi.loss, voi.deformity);
  const double fg = uniform(rng, 0.65, 0.85);
  const double bg = uniform(rng, 0.10, 0.20);
  voi.intensity = fg;

  std::vector<Body> bodies{voi};
  // Upper and lower neighbours, always healthy.
  for (int side : {-1, 1}) {
    Body nb;
    const double f = side < 0 ? uniform(rng, 0.92, 1.0) : uniform(rng, 1.0, 1.08);
    nb.width = voi.width * f;
    nb.height = voi.height * f;
    const double gap = uniform(rng, config.disc_gap);
    nb.y = side * (voi.height / 2 + gap + nb.height / 2);
    nb.x = uniform(rng, -3.0, 3.0);
    nb.intensity = fg * uniform(rng, 0.95, 1.05);
    if (config.neighbor_context) bodies.push_back(nb);
  }

  int jy = 0, jx = 0;
  if (config.jitter_px > 0) {
    std::uniform_int_distribution<int> jd(-config.jitter_px, config.jitter_px);
    jy = jd(rng);
    jx = jd(rng);
  }
  prm.body_width_mm = voi.width;
  prm.body_height_mm = voi.height;
  prm.height_loss = voi.loss;
  prm.deformity = voi.deformity;
  prm.foreground = fg;
  prm.background = bg;
  prm.center_row = size / 2 + jy;
  prm.center_col = size / 2 + jx;

  // Column spans: bodies plus a posterior-element block behind each body.
  auto spans_at = [&](double x) {
    std::vector<Span> spans;
    for (const auto& b : bodies) {
      const double u = (x - (b.x - b.width / 2)) / b.width;
      if (u >= 0 && u <= 1) {
        const double h = b.height * height_factor(b.deformity, b.loss, u);
        spans.push_back({b.y - h / 2, b.y + h / 2, b.intensity});
      }
      const double p0 = b.x + b.width / 2 + 2.0;
      if (x >= p0 && x <= p0 + 0.35 * b.width)
        spans.push_back({b.y - 0.3 * b.height, b.y + 0.3 * b.height, 0.7 * b.intensity});
    }
    return spans;
  };

  constexpr int kSub = 4;
  Image img = Image::Constant(size, size, static_cast<float>(bg));
  for (int c = 0; c < size; ++c) {
    const double xc = (c - prm.center_col) * pm;
    for (int s = 0; s < kSub; ++s) {
      const double x = xc + ((s + 0.5) / kSub - 0.5) * pm;
      for (const auto& sp : spans_at(x)) {
        const int r0 = std::max(0, static_cast<int>(std::floor(sp.top / pm + prm.center_row + 0.5)));
        const int r1 = std::min(size - 1, static_cast<int>(std::floor(sp.bottom / pm + prm.center_row + 0.5)));
        for (int row = r0; row <= r1; ++row) {
          const double y0 = (row - prm.center_row - 0.5) * pm;
          const double overlap = std::min(y0 + pm, sp.bottom) - std::max(y0, sp.top);
          if (overlap > 0) img(row, c) += static_cast<float>((sp.intensity - bg) * overlap / pm / kSub);
        }
      }
    }
  }

  img = gaussian_blur(img, config.smoothing_px);
  if (config.noise_amplitude > 0) {
    std::normal_distribution<double> noise(0.0, config.noise_amplitude);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] += static_cast<float>(noise(rng));
  }
  out.patch.image = img.cwiseMax(0.0f).cwiseMin(1.0f);

  const double sigma_px = config.heatmap_sigma_mm / pm;
  out.patch.heatmap.resize(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double r2 = double(i - prm.center_row) * (i - prm.center_row) + double(j - prm.center_col) * (j - prm.center_col);
      out.patch.heatmap(i, j) = static_cast<float>(std::exp(-r2 / (2 * sigma_px * sigma_px)));
    }
  return out;
}

// ---------------------------------------------------------------- datasets

CountTable paper_ratio_counts(double scale) {
  if (!(scale > 0)) throw std::invalid_argument("scale must be positive");
  const std::array<double, 3> totals{1133, 104, 46};
  const std::array<double, 5> healthy_w{5, 4, 3, 4, 1};
  const std::array<double, 5> fracture_w{1, 3, 4, 3, 1};
  CountTable counts{};
  for (int g = 0; g < 3; ++g) {
    const auto total = std::llround(totals[g] * scale);
    const auto& w = g == 0 ? healthy_w : fracture_w;
    double wsum = 0;
    for (double v : w) wsum += v;
    // Largest-remainder apportionment.
    std::array<double, 5> rem{};
    long long assigned = 0;
    for (int r = 0; r < 5; ++r) {
      const double exact = static_cast<double>(total) * w[r] / wsum;
      counts[g][r] = static_cast<int>(std::floor(exact));
      rem[r] = exact - counts[g][r];
      assigned += counts[g][r];
    }
    while (assigned < total) {
      const auto best = std::max_element(rem.begin(), rem.end()) - rem.begin();
      ++counts[g][best];
      rem[best] = -1;
      ++assigned;
    }
  }
  return counts;
}

std::vector<Grade> Dataset::grades() const {
  std::vector<Grade> g;
  g.reserve(samples.size());
  for (const auto& s : samples) g.push_back(s.grade);
  return g;
}

std::vector<Region> Dataset::regions() const {
  std::vector<Region> r;
  r.reserve(samples.size());
  for (const auto& s : samples) r.push_back(s.region);
  return r;
}

Dataset generate_dataset(const PhantomConfig& config, const CountTable& counts, std::uint64_t seed) {
  long long total = 0;
  for (const auto& row : counts)
    for (int n : row) {
      if (n < 0) throw std::invalid_argument("sample counts must be nonnegative");
      total += n;
    }
  if (total == 0) throw std::invalid_argument("dataset must contain at least one sample");

  PhantomConfig cfg = config;
  cfg.seed = seed;
  cfg.validate();
  Dataset ds;
  ds.manifest["seed"] = seed;
  ds.manifest["config_digest"] = cfg.digest();
  ds.manifest["config"] = cfg.to_json();
  ds.manifest["samples"] = nlohmann::json::array();
  std::int64_t id = 0;
  for (int g = 0; g < 3; ++g)
    for (int r = 0; r < 5; ++r)
      for (int k = 0; k < counts[g][r]; ++k, ++id) {
        ds.samples.push_back(generate_patch(cfg, kGrades[g], kRegions[r], id));
        char file[48];
        std::snprintf(file, sizeof file, "samples/%06lld.vpat", static_cast<long long>(id));
        ds.manifest["samples"].push_back({{"id", id},
                                          {"grade", grade_name(kGrades[g])},
                                          {"region", region_name(kRegions[r])},
                                          {"file", file},
                                          {"params", ds.samples.back().params.to_json()}});
      }
  return ds;
}

// ---------------------------------------------------------------- volumes

SpineVolume generate_spine_volume(const PhantomConfig& config, int n_vertebrae, double curvature,
                                  const std::vector<Grade>& grades, std::uint64_t seed,
                                  const VolumeOptions& options) {
  config.validate();
  if (n_vertebrae < 1 || n_vertebrae > 17) throw std::invalid_argument("n_vertebrae must lie in [1, 17]");
  if (static_cast<int>(grades.size()) != n_vertebrae)
    throw std::invalid_argument("grades must list one grade per vertebra");

  struct Solid {
    double height, depth, lateral, loss;
    Deformity deformity;
    int z0;
    double zc;
  };
  std::vector<Solid> solids;
  const int first_level = 17 - n_vertebrae;
  int z = options.axial_margin;
  for (int k = 0; k < n_vertebrae; ++k) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    const int level = first_level + k;
    const int r = static_cast<int>(region_of_level(level));
    Solid s{};
    // Even heights keep the nominal centre on an integer slice.
    s.height = 2.0 * std::round(uniform(rng, config.body_height[r]) / 2.0);
    s.depth = uniform(rng, config.body_width[r]);
    s.lateral = 1.25 * s.depth;
    const int gap = static_cast<int>(std::round(uniform(rng, config.disc_gap)));
    draw_fracture(rng, config, grades[k], s.loss, s.deformity);
    s.z0 = z;
    s.zc = z + s.height / 2;
    solids.push_back(s);
    z += static_cast<int>(s.height) + gap;
  }

  SpineVolume vol;
  vol.nx = vol.ny = options.lateral_size;
  vol.nz = static_cast<int>(solids.back().z0 + solids.back().height) + options.axial_margin;
  vol.voxels.assign(static_cast<std::size_t>(vol.nx) * vol.ny * vol.nz, 0.0f);

  const double x0 = vol.nx / 2;
  const double y0 = vol.ny / 2;
  const double span = solids.back().zc - solids.front().zc;
  for (int k = 0; k < n_vertebrae; ++k) {
    auto& s = solids[k];
    const double t = span > 0 ? (s.zc - solids.front().zc) / span : 0.0;
    const double xc = x0 + curvature * options.scoliosis_mm * std::sin(2 * std::numbers::pi * t);
    const double yc = y0 + curvature * options.kyphosis_mm * std::sin(std::numbers::pi * t);
    vol.centroids.push_back({level_name(first_level + k), {xc, yc, s.zc}});

    VoxelBox box;
    box.lo = {static_cast<int>(std::floor(xc - s.lateral / 2)), static_cast<int>(std::floor(yc - s.depth / 2)), s.z0};
    box.hi = {static_cast<int>(std::ceil(xc + s.lateral / 2)), static_cast<int>(std::ceil(yc + s.depth / 2)),
              static_cast<int>(s.z0 + s.height)};
    for (int a = 0; a < 3; ++a) {
      const int n = a == 0 ? vol.nx : (a == 1 ? vol.ny : vol.nz);
      if (box.lo[a] < 0 || box.hi[a] >= n)
        throw std::invalid_argument("volume bounds too small for the requested spine");
    }
    vol.body_boxes.push_back(box);

    for (int zz = box.lo[2]; zz <= box.hi[2]; ++zz)
      for (int yy = box.lo[1]; yy <= box.hi[1]; ++yy)
        for (int xx = box.lo[0]; xx <= box.hi[0]; ++xx) {
          const double v = yy - yc;
          const double w = xx - xc;
          const double e = (v * v) / (s.depth * s.depth / 4) + (w * w) / (s.lateral * s.lateral / 4);
          if (e > 1.0) continue;
          const double u = (v + s.depth / 2) / s.depth;
          const double h = s.height * height_factor(s.deformity, s.loss, u);
          if (std::abs(zz - s.zc) <= h / 2)
            vol.voxels[(static_cast<std::size_t>(zz) * vol.ny + yy) * vol.nx + xx] = 1.0f;
        }
  }
  return vol;
}

}  // namespace gradeloss
