#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "gradeloss/phantom.hpp"
#include "gradeloss/spline.hpp"
#include "gradeloss/tensor_io.hpp"
#include "oracles.hpp"

using namespace gradeloss;

namespace {

double grade_total(const CountTable& t, int slot) { return std::accumulate(t[slot].begin(), t[slot].end(), 0); }

// Smallest measured height over the body's interior, relative to its nominal height.
double min_height_ratio(const PatchSample& s, double pm) {
  double lo = 1e9;
  for (double u = 0.1; u <= 0.9001; u += 0.05)
    lo = std::min(lo, oracle::column_height_mm(s, oracle::column_at(s, u, pm), pm));
  return lo / s.params.body_height_mm;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gradeloss_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("healthy mid-body height matches its nominal height") {
  PhantomConfig cfg;
  cfg.seed = 3;
  for (int id = 0; id < 40; ++id) {
    const auto s = generate_patch(cfg, Grade::G0, kRegions[id % 5], id);
    const double h = oracle::mean_height_mm(s, 0.4, 0.6, cfg.pixel_mm());
    CHECK(std::abs(h / s.params.body_height_mm - 1.0) <= 0.03);
  }
}

TEST_CASE("wedge G3 anterior height ratio") {
  PhantomConfig cfg;
  cfg.wedge_probability = 1.0;
  cfg.seed = 4;
  for (int id = 0; id < 40; ++id) {
    const auto s = generate_patch(cfg, Grade::G3, kRegions[id % 5], id);
    REQUIRE(s.params.deformity == Deformity::Wedge);
    const double h = oracle::mean_height_mm(s, 0.05, 0.15, cfg.pixel_mm());
    const double ratio = h / s.params.body_height_mm;
    CHECK(ratio >= 0.30 - 0.03);
    CHECK(ratio <= 0.59 + 0.03);
    CHECK(std::abs(ratio - (1 - s.params.height_loss)) <= 0.03);
  }
}

TEST_CASE("measured height ordering across grades") {
  PhantomConfig cfg;
  cfg.seed = 5;
  const double pm = cfg.pixel_mm();
  int ok = 0, total = 0;
  for (int k = 0; k < 200; ++k) {
    const Region r = kRegions[k % 5];
    const double h0 = min_height_ratio(generate_patch(cfg, Grade::G0, r, 3 * k), pm);
    const double h2 = min_height_ratio(generate_patch(cfg, Grade::G2, r, 3 * k + 1), pm);
    const double h3 = min_height_ratio(generate_patch(cfg, Grade::G3, r, 3 * k + 2), pm);
    ok += h0 > h2 && h2 > h3;
    ++total;
  }
  CHECK(ok >= 0.99 * total);
}

TEST_CASE("height factor shapes") {
  CHECK(height_factor(Deformity::None, 0.5, 0.3) == 1.0);
  CHECK(height_factor(Deformity::Wedge, 0.5, 0.1) == doctest::Approx(0.5));
  CHECK(height_factor(Deformity::Wedge, 0.5, 0.9) == 1.0);
  CHECK(height_factor(Deformity::Biconcave, 0.4, 0.5) == doctest::Approx(0.6));
  CHECK(height_factor(Deformity::Biconcave, 0.4, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("patches are deterministic and in range") {
  PhantomConfig cfg;
  cfg.seed = 9;
  cfg.jitter_px = 3;
  const auto a = generate_patch(cfg, Grade::G2, Region::L1_L4, 17);
  const auto b = generate_patch(cfg, Grade::G2, Region::L1_L4, 17);
  CHECK(a.patch.image == b.patch.image);
  CHECK(a.patch.heatmap == b.patch.heatmap);
  CHECK(a.patch.image.minCoeff() >= 0.0f);
  CHECK(a.patch.image.maxCoeff() <= 1.0f);
  CHECK(a.patch.heatmap(a.params.center_row, a.params.center_col) == doctest::Approx(1.0f));
  CHECK(a.patch.heatmap.maxCoeff() == a.patch.heatmap(a.params.center_row, a.params.center_col));
  const auto c = generate_patch(cfg, Grade::G2, Region::L1_L4, 18);
  CHECK(a.patch.image != c.patch.image);
}

TEST_CASE("phantom config validation and json") {
  PhantomConfig cfg;
  cfg.patch_size = 32;
  cfg.field_mm = 80;
  cfg.seed = 12;
  const auto back = PhantomConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.pixel_mm() == doctest::Approx(2.5));
  cfg.g2_loss = {0.5, 0.4};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = PhantomConfig{};
  cfg.field_mm = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dataset counts at half the paper ratio") {
  const auto counts = paper_ratio_counts(0.5);
  CHECK(grade_total(counts, 0) == 567);
  CHECK(grade_total(counts, 1) == 52);
  CHECK(grade_total(counts, 2) == 23);
  const auto full = paper_ratio_counts(1.0);
  CHECK(grade_total(full, 0) == 1133);
  CHECK(grade_total(full, 1) == 104);
  CHECK(grade_total(full, 2) == 46);

  PhantomConfig cfg;
  cfg.patch_size = 16;
  const auto ds = generate_dataset(cfg, counts, 1);
  std::array<int, 3> seen{};
  for (const auto& s : ds.samples) seen[grade_slot(s.grade)] += 1;
  CHECK(seen == std::array<int, 3>{567, 52, 23});
  REQUIRE(ds.manifest.contains("samples"));
  CHECK(ds.manifest["samples"].size() == ds.samples.size());
}

TEST_CASE("dataset edge cases and determinism") {
  PhantomConfig cfg;
  cfg.patch_size = 16;
  CountTable zero{};
  CHECK_THROWS_AS(generate_dataset(cfg, zero, 1), std::invalid_argument);
  CountTable one{};
  one[2][3] = 1;
  const auto ds = generate_dataset(cfg, one, 1);
  REQUIRE(ds.samples.size() == 1);
  CHECK(ds.samples[0].grade == Grade::G3);
  CHECK(ds.samples[0].region == Region::L1_L4);
  CountTable neg{};
  neg[0][0] = -1;
  CHECK_THROWS_AS(generate_dataset(cfg, neg, 1), std::invalid_argument);

  const auto counts = paper_ratio_counts(0.05);
  CHECK(dataset_digest(generate_dataset(cfg, counts, 4)) == dataset_digest(generate_dataset(cfg, counts, 4)));
  CHECK(dataset_digest(generate_dataset(cfg, counts, 4)) != dataset_digest(generate_dataset(cfg, counts, 5)));
}

TEST_CASE("dataset files round trip") {
  PhantomConfig cfg;
  cfg.patch_size = 16;
  const auto ds = generate_dataset(cfg, paper_ratio_counts(0.02), 8);
  const auto dir = temp_dir("dataset");
  const auto digest = write_dataset(dir, ds);
  CHECK(digest == dataset_digest(ds));
  const auto back = read_dataset(dir);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].grade == ds.samples[i].grade);
    CHECK(back.samples[i].region == ds.samples[i].region);
    CHECK(back.samples[i].id == ds.samples[i].id);
    CHECK(back.samples[i].patch.image == ds.samples[i].patch.image);
    CHECK(back.samples[i].patch.heatmap == ds.samples[i].patch.heatmap);
  }
  CHECK(dataset_digest(back) == digest);
  std::filesystem::remove_all(dir);
}

TEST_CASE("vpat and vvol codecs") {
  Image a = Image::Random(3, 4), b = Image::Random(3, 4);
  const auto bytes = encode_vpat({&a, &b});
  CHECK(bytes.compare(0, 4, "VPAT") == 0);
  CHECK(bytes.size() == 16 + 2 * 12 * 4);
  const auto back = decode_vpat(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == a);
  CHECK(back[1] == b);
  CHECK_THROWS(decode_vpat(bytes.substr(0, 20)));
  CHECK_THROWS(decode_vpat("XXXX" + bytes.substr(4)));

  PhantomConfig cfg;
  VolumeOptions small;
  small.lateral_size = 96;
  const auto vol = generate_spine_volume(cfg, 5, 0.2, std::vector<Grade>(5, Grade::G0), 1, small);
  const auto vb = decode_vvol(encode_vvol(vol));
  CHECK(vb.nx == vol.nx);
  CHECK(vb.nz == vol.nz);
  CHECK(vb.voxels == vol.voxels);
  REQUIRE(vb.centroids.size() == vol.centroids.size());
  for (std::size_t i = 0; i < vol.centroids.size(); ++i) {
    CHECK(vb.centroids[i].label == vol.centroids[i].label);
    CHECK(vb.centroids[i].position == vol.centroids[i].position);
  }
}

TEST_CASE("straight spine centroids are colinear") {
  PhantomConfig cfg;
  const auto vol = generate_spine_volume(cfg, 17, 0.0, std::vector<Grade>(17, Grade::G0), 2);
  for (const auto& c : vol.centroids) {
    CHECK(std::abs(c.position[0] - vol.centroids[0].position[0]) <= 0.5);
    CHECK(std::abs(c.position[1] - vol.centroids[0].position[1]) <= 0.5);
  }
  CHECK(vol.centroids.front().label == "T1");
  CHECK(vol.centroids.back().label == "L5");
}

TEST_CASE("curved spine centroids advance monotonically") {
  PhantomConfig cfg;
  const auto vol = generate_spine_volume(cfg, 17, 0.3, std::vector<Grade>(17, Grade::G0), 2);
  for (std::size_t i = 1; i < vol.centroids.size(); ++i)
    CHECK(vol.centroids[i].position[2] > vol.centroids[i - 1].position[2]);
  CHECK_THROWS_AS(generate_spine_volume(cfg, 3, 0.0, std::vector<Grade>(2, Grade::G0), 2), std::invalid_argument);
  VolumeOptions tiny;
  tiny.lateral_size = 20;
  CHECK_THROWS_AS(generate_spine_volume(cfg, 3, 0.0, std::vector<Grade>(3, Grade::G0), 2, tiny),
                  std::invalid_argument);
}

TEST_CASE("a fracture changes voxels only inside its own body box") {
  PhantomConfig cfg;
  std::vector<Grade> healthy(17, Grade::G0), broken = healthy;
  const int k = 12;
  broken[k] = Grade::G3;
  const auto a = generate_spine_volume(cfg, 17, 0.3, healthy, 6);
  const auto b = generate_spine_volume(cfg, 17, 0.3, broken, 6);
  REQUIRE(a.voxels.size() == b.voxels.size());
  const auto& box = a.body_boxes[k];
  std::size_t changed = 0, outside = 0;
  for (int z = 0; z < a.nz; ++z)
    for (int y = 0; y < a.ny; ++y)
      for (int x = 0; x < a.nx; ++x)
        if (a.at(x, y, z) != b.at(x, y, z)) {
          ++changed;
          const bool in = x >= box.lo[0] && x <= box.hi[0] && y >= box.lo[1] && y <= box.hi[1] &&
                          z >= box.lo[2] && z <= box.hi[2];
          outside += !in;
        }
  CHECK(changed > 0);
  CHECK(outside == 0);
}

TEST_CASE("natural spline reproduces a line and its arc length") {
  std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {1, 2, 2}, {2, 4, 4}, {4, 8, 8}};
  NaturalCubicSpline s(pts);
  CHECK(s.total_arc_length() == doctest::Approx(12.0).epsilon(1e-9));
  const Eigen::Vector3d mid = s.eval(s.parameter_at_arc(6.0));
  CHECK((mid - Eigen::Vector3d(2, 4, 4)).norm() < 1e-9);
  CHECK_THROWS_AS(NaturalCubicSpline({{0, 0, 0}, {1, 1, 1}}), std::invalid_argument);
}

TEST_CASE("spline arc length matches a dense polyline") {
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(10 * std::sin(0.7 * i), 5 * std::cos(0.3 * i), 20.0 * i);
  NaturalCubicSpline s(pts);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const double oracle_len =
        oracle::polyline_length([&](double t) { return s.eval(t); }, 0.0, s.knots()[k], 20000);
    CHECK(std::abs(s.arc_length(s.knots()[k]) - oracle_len) < 1e-3);
    CHECK((s.eval(s.knots()[k]) - pts[k]).norm() < 1e-9);
  }
  for (double a : {5.0, 37.5, 90.0}) CHECK(s.arc_length(s.parameter_at_arc(a)) == doctest::Approx(a).epsilon(1e-9));
}

TEST_CASE("straight spine reformation equals the mid-sagittal slice") {
  PhantomConfig cfg;
  std::vector<Grade> grades(17, Grade::G0);
  grades[13] = Grade::G3;
  const auto vol = generate_spine_volume(cfg, 17, 0.0, grades, 3);
  const int pad = 40;
  const auto ref = reformat_curved(vol, pad);
  const int x = static_cast<int>(std::lround(vol.centroids[0].position[0]));
  const int y0 = static_cast<int>(std::lround(vol.centroids[0].position[1]));
  const int z0 = static_cast<int>(std::lround(vol.centroids[0].position[2])) - pad;
  const int cc = ref.grid.cols() / 2;
  double worst = 0;
  for (int r = 0; r < ref.grid.rows(); ++r)
    for (int c = 0; c < ref.grid.cols(); ++c) {
      const int z = z0 + r, y = y0 + c - cc;
      const float expect = (z >= 0 && z < vol.nz && y >= 0 && y < vol.ny) ? vol.at(x, y, z) : 0.0f;
      worst = std::max(worst, static_cast<double>(std::abs(ref.grid(r, c) - expect)));
    }
  CHECK(worst <= 1e-6);
  CHECK(ref.out_of_bounds == 0);
}

TEST_CASE("curved spine centroid rows follow arc length") {
  PhantomConfig cfg;
  const auto vol = generate_spine_volume(cfg, 17, 0.3, std::vector<Grade>(17, Grade::G0), 3);
  const int pad = 40;
  const auto ref = reformat_curved(vol, pad);
  std::vector<Eigen::Vector3d> pts;
  for (const auto& c : vol.centroids) pts.emplace_back(c.position[0], c.position[1], c.position[2]);
  NaturalCubicSpline s(pts);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double len = oracle::polyline_length([&](double t) { return s.eval(t); }, 0.0, s.knots()[k], 50000);
    CHECK(std::abs(ref.centroids[k].row - (len + pad)) <= 1.0);
    CHECK(ref.centroids[k].col == ref.grid.cols() / 2);
  }
  CHECK(ref.grid.rows() >= static_cast<int>(ref.arc_positions.back()) + 2 * pad);
}

TEST_CASE("reformation needs three centroids") {
  SpineVolume v;
  v.nx = v.ny = v.nz = 4;
  v.voxels.assign(64, 0.0f);
  v.centroids = {{"a", {1, 1, 1}}, {"b", {1, 1, 2}}};
  CHECK_THROWS_AS(reformat_curved(v), std::invalid_argument);
}

TEST_CASE("patch extraction") {
  const Image ones = Image::Ones(200, 200);
  const auto p = extract_patch(ones, {100, 100}, 8.0);
  CHECK(p.image.rows() == 112);
  CHECK(p.image.isOnes());
  CHECK(p.heatmap(56, 56) == 1.0f);
  CHECK(p.heatmap(56, 64) == doctest::Approx(std::exp(-0.5)).epsilon(1e-6));
  CHECK(p.heatmap(48, 56) == doctest::Approx(0.6065).epsilon(1e-4));

  const auto corner = extract_patch(ones, {0, 0}, 8.0);
  int zero_quadrants = 0;
  for (int qr = 0; qr < 2; ++qr)
    for (int qc = 0; qc < 2; ++qc) zero_quadrants += corner.image.block(qr * 56, qc * 56, 56, 56).isZero(0.0f);
  CHECK(zero_quadrants >= 3);

  const auto j = extract_patch(ones, {100, 100}, 4.0, 32, {3, -2});
  CHECK(j.heatmap(16 - 3, 16 + 2) == 1.0f);
  CHECK(j.heatmap.maxCoeff() == 1.0f);
  CHECK_THROWS_AS(extract_patch(ones, {0, 0}, 0.0), std::invalid_argument);
}
