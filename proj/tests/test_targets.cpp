#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "occfeat/dataset.hpp"
#include "occfeat/synth_world.hpp"
#include "occfeat/targets.hpp"
#include "test_util.hpp"

using namespace occfeat;
using namespace occfeat::targets;
using geom::Vec3;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.x_range = {-2.0, 2.0};
  g.y_range = {-1.0, 3.0};
  g.z_range = {0.0, 2.0};
  g.h_cells = 4;
  g.w_cells = 8;
  g.z_cells = 2;
  return g;
}

// Tests each point against the bounds of each voxel.
Tensor containment_oracle(const Tensor& pts, const GridSpec& g) {
  Tensor out({g.z_cells, g.h_cells, g.w_cells});
  const double sx = g.voxel_size_x(), sy = g.voxel_size_y(), sz = g.voxel_size_z();
  for (std::size_t k = 0; k < g.z_cells; ++k)
    for (std::size_t i = 0; i < g.h_cells; ++i)
      for (std::size_t j = 0; j < g.w_cells; ++j)
        for (std::size_t n = 0; n < pts.dim(0); ++n) {
          const double x = pts.at(n, 0), y = pts.at(n, 1), z = pts.at(n, 2);
          const double x0 = g.x_range.min + i * sx, y0 = g.y_range.min + j * sy, z0 = g.z_range.min + k * sz;
          const double x1 = i + 1 == g.h_cells ? g.x_range.max : g.x_range.min + (i + 1) * sx;
          const double y1 = j + 1 == g.w_cells ? g.y_range.max : g.y_range.min + (j + 1) * sy;
          const double z1 = k + 1 == g.z_cells ? g.z_range.max : g.z_range.min + (k + 1) * sz;
          if (x >= x0 && x < x1 && y >= y0 && y < y1 && z >= z0 && z < z1) {
            out.at(k, i, j) = 1.0;
            break;
          }
        }
  return out;
}

Tensor constant_map(std::size_t c, std::size_t h, std::size_t w, std::vector<double> v) {
  Tensor t({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) t.at(ch, r, q) = v[ch];
  return t;
}

}  // namespace

TEST_CASE("voxelize: empty cloud and voxel centers") {
  const auto g = small_grid();
  CHECK(voxelize(Tensor({0, 3}), g).occupied_count() == 0);
  for (std::size_t k = 0; k < g.z_cells; ++k)
    for (std::size_t i = 0; i < g.h_cells; ++i)
      for (std::size_t j = 0; j < g.w_cells; ++j) {
        const Vec3 c = g.voxel_center({k, i, j});
        Tensor p({1, 3});
        p.at(0, 0) = c.x;
        p.at(0, 1) = c.y;
        p.at(0, 2) = c.z;
        const auto occ = voxelize(p, g);
        CHECK(occ.occupied_count() == 1);
        CHECK(occ.data.at(k, i, j) == 1.0);
      }
}

TEST_CASE("voxelize matches the containment oracle on random clouds") {
  Rng rng(1);
  for (int inst = 0; inst < 10; ++inst) {
    GridSpec g;
    g.x_range = {rng.uniform(-5, -1), rng.uniform(1, 5)};
    g.y_range = {rng.uniform(-5, -1), rng.uniform(1, 5)};
    g.z_range = {rng.uniform(-2, 0), rng.uniform(1, 3)};
    g.h_cells = 1 + rng.index(12);
    g.w_cells = 1 + rng.index(12);
    g.z_cells = 1 + rng.index(6);
    Tensor pts({1000, 3});
    for (std::size_t n = 0; n < 1000; ++n) {
      pts.at(n, 0) = rng.uniform(-6, 6);
      pts.at(n, 1) = rng.uniform(-6, 6);
      pts.at(n, 2) = rng.uniform(-3, 4);
    }
    // Some points exactly on faces.
    for (std::size_t n = 0; n < 50; ++n) pts.at(n, 0) = g.x_range.min + (n % (g.h_cells + 1)) * g.voxel_size_x();
    const auto occ = voxelize(pts, g);
    const Tensor want = containment_oracle(pts, g);
    CHECK(occ.data == want);
    CHECK(occ.occupied_count() <= 1000);
  }
}

TEST_CASE("voxelize is invariant to point order") {
  const Tensor pts = testutil::random_tensor({400, 3}, 2, 1.5);
  Tensor rev({400, 3});
  for (std::size_t n = 0; n < 400; ++n)
    for (std::size_t a = 0; a < 3; ++a) rev.at(n, a) = pts.at(399 - n, a);
  const auto g = small_grid();
  CHECK(voxelize(pts, g).data == voxelize(rev, g).data);
}

TEST_CASE("occupied count equals the point count when points are in distinct voxels") {
  const auto g = small_grid();
  Tensor pts({g.voxel_count(), 3});
  std::size_t n = 0;
  for (std::size_t k = 0; k < g.z_cells; ++k)
    for (std::size_t i = 0; i < g.h_cells; ++i)
      for (std::size_t j = 0; j < g.w_cells; ++j, ++n) {
        const Vec3 c = g.voxel_center({k, i, j});
        pts.at(n, 0) = c.x + 0.2;
        pts.at(n, 1) = c.y - 0.2;
        pts.at(n, 2) = c.z;
      }
  CHECK(voxelize(pts, g).occupied_count() == g.voxel_count());
}

TEST_CASE("feature targets: single camera equals the bilinear sample") {
  GridSpec g;
  g.x_range = {2.0, 6.0};
  g.y_range = {-2.0, 2.0};
  g.z_range = {0.0, 2.0};
  g.h_cells = g.w_cells = 4;
  g.z_cells = 2;
  const auto cam = geom::make_camera(64, 48, 16, 12, 1.6, geom::look_transform({0, 0, 1}, 0.0, 0.0));
  const Tensor map = testutil::random_tensor({5, 12, 16}, 3);
  OccupancyGrid occ{Tensor({2, 4, 4}, 1.0)};
  const std::vector<geom::CameraModel> cams{cam};
  const std::vector<Tensor> maps{map};
  const auto t = build_feature_targets(occ, g, cams, maps);
  std::size_t valid = 0;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const auto p = geom::project(g.voxel_center({k, i, j}), cam);
        const auto f = geom::pixel_to_feature(p.u, p.v, cam);
        const auto s = geom::bilinear_sample(map, f.uf, f.vf);
        const bool ok = p.valid && s.in_bounds;
        CHECK(t.valid_mask.at(k, i, j) == (ok ? 1.0 : 0.0));
        valid += ok;
        for (std::size_t c = 0; c < 5; ++c)
          CHECK(t.features.at(c, k, i, j) == doctest::Approx(ok ? s.values[c] : 0.0).epsilon(1e-12));
      }
  CHECK(valid > 10);
  CHECK(t.valid_count() == valid);
}

TEST_CASE("feature targets: two cameras with constant maps average") {
  GridSpec g;
  g.x_range = {4.0, 5.0};
  g.y_range = {-0.5, 0.5};
  g.z_range = {0.5, 1.5};
  g.h_cells = g.w_cells = g.z_cells = 1;
  const std::vector<geom::CameraModel> cams{
      geom::make_camera(32, 24, 8, 6, 1.5, geom::look_transform({0, 0, 1}, 0.0, 0.0)),
      geom::make_camera(32, 24, 8, 6, 1.5, geom::look_transform({0, 1, 1}, -0.2, 0.0))};
  const std::vector<Tensor> maps{constant_map(2, 6, 8, {1.0, 3.0}), constant_map(2, 6, 8, {2.0, -1.0})};
  const auto t = build_feature_targets(OccupancyGrid{Tensor({1, 1, 1}, 1.0)}, g, cams, maps);
  CHECK(t.valid_mask.at(0, 0, 0) == 1.0);
  CHECK(t.features.at(0, 0, 0, 0) == doctest::Approx(1.5));
  CHECK(t.features.at(1, 0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("feature targets: voxels behind every camera are excluded") {
  GridSpec g;
  g.x_range = {-4.0, 4.0};
  g.y_range = {-4.0, 4.0};
  g.z_range = {0.0, 2.0};
  g.h_cells = g.w_cells = 8;
  g.z_cells = 2;
  // One forward camera; everything with x < 0 is behind it.
  const std::vector<geom::CameraModel> cams{
      geom::make_camera(64, 48, 16, 12, 1.4, geom::look_transform({0.5, 0, 1}, 0.0, 0.1))};
  const std::vector<Tensor> maps{constant_map(3, 12, 16, {0.2, -0.4, 0.9})};
  OccupancyGrid occ{Tensor({2, 8, 8}, 1.0)};
  const auto t = build_feature_targets(occ, g, cams, maps);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const bool behind = g.voxel_center({k, i, j}).x < 0.5;
        if (behind) {
          CHECK(t.valid_mask.at(k, i, j) == 0.0);
          for (std::size_t c = 0; c < 3; ++c) CHECK(t.features.at(c, k, i, j) == 0.0);
        }
        if (t.valid_mask.at(k, i, j) == 1.0) {
          // Constant maps give the constant exactly.
          CHECK(t.features.at(0, k, i, j) == 0.2);
          CHECK(t.features.at(1, k, i, j) == -0.4);
          CHECK(t.features.at(2, k, i, j) == 0.9);
        }
      }
  CHECK(t.valid_count() > 0);
}

TEST_CASE("feature targets: unoccupied voxels stay empty and inputs are checked") {
  const auto g = small_grid();
  const auto cams = synth::make_rig(synth::RigConfig{});
  std::vector<Tensor> maps;
  for (std::size_t c = 0; c < cams.size(); ++c) maps.push_back(testutil::random_tensor({4, 16, 24}, 10 + c));
  OccupancyGrid occ{Tensor({g.z_cells, g.h_cells, g.w_cells})};
  const auto empty = build_feature_targets(occ, g, cams, maps);
  CHECK(empty.valid_count() == 0);
  for (double v : empty.features.values()) CHECK(v == 0.0);

  const std::vector<Tensor> fewer(maps.begin(), maps.end() - 1);
  CHECK_THROWS_AS(build_feature_targets(occ, g, cams, fewer), std::invalid_argument);
  auto mixed = maps;
  mixed[1] = testutil::random_tensor({3, 16, 24}, 1);
  CHECK_THROWS_AS(build_feature_targets(occ, g, cams, mixed), std::invalid_argument);
}

TEST_CASE("targets on a synthetic sample: mask implies occupancy") {
  synth::WorldConfig w;
  w.lidar_points = 3000;
  const auto s = synth::generate_sample(4, 0, w);
  const auto t = data::compute_targets(s, w.grid);
  CHECK(t.occupancy.occupied_count() > 0);
  CHECK(t.features.valid_count() > 0);
  for (std::size_t v = 0; v < t.features.valid_mask.size(); ++v) {
    if (t.features.valid_mask[v] == 1.0) CHECK(t.occupancy.data[v] == 1.0);
  }

  const auto dir = testutil::scratch_dir("targets_rt");
  data::write_targets(dir, s.id, t);
  const auto back = data::read_targets(dir, s.id, w.grid);
  CHECK(back.occupancy.data == t.occupancy.data);
  CHECK(back.features.valid_mask == t.features.valid_mask);
  std::filesystem::remove(dir / (s.id + ".ymask.oft"));
  try {
    data::read_targets(dir, s.id, w.grid);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(".ymask.oft") != std::string::npos);
  }
}
