#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "occfeat/dataset.hpp"
#include "occfeat/synth_world.hpp"
#include "occfeat/tensor_io.hpp"
#include "test_util.hpp"

using namespace occfeat;
using namespace occfeat::synth;
using geom::Vec3;

namespace {

// Distance from p to the surface of an oriented box, computed in the box frame.
double box_surface_distance(const OrientedBox& b, Vec3 p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x - b.center.x, dy = p.y - b.center.y;
  const double l[3] = {c * dx + s * dy, -s * dx + c * dy, p.z - b.center.z};
  const double h[3] = {b.half_extents.x, b.half_extents.y, b.half_extents.z};
  double outside = 0.0, inside = -1e300;
  for (int a = 0; a < 3; ++a) {
    const double d = std::abs(l[a]) - h[a];
    outside += std::max(d, 0.0) * std::max(d, 0.0);
    inside = std::max(inside, d);
  }
  return outside > 0.0 ? std::sqrt(outside) : -inside;
}

double surface_distance(const Scene& scene, Vec3 p) {
  double best = std::abs(p.z);
  for (const auto& b : scene.boxes) best = std::min(best, box_surface_distance(b, p));
  return best;
}

WorldConfig empty_world() {
  WorldConfig w;
  w.min_boxes = w.max_boxes = 0;
  return w;
}

}  // namespace

TEST_CASE("generate_scene is deterministic and respects the configuration") {
  const WorldConfig w;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene a = generate_scene(seed, w);
    const Scene b = generate_scene(seed, w);
    REQUIRE(a.boxes.size() == b.boxes.size());
    CHECK(a.boxes.size() >= w.min_boxes);
    CHECK(a.boxes.size() <= w.max_boxes);
    std::size_t vehicles = 0;
    for (std::size_t i = 0; i < a.boxes.size(); ++i) {
      const auto& x = a.boxes[i];
      CHECK(x.center.x == b.boxes[i].center.x);
      CHECK(x.yaw == b.boxes[i].yaw);
      CHECK(x.half_extents.x > 0.0);
      CHECK(x.half_extents.y > 0.0);
      CHECK(x.half_extents.z > 0.0);
      CHECK(x.center.z == x.half_extents.z);
      const double r = std::hypot(x.half_extents.x, x.half_extents.y);
      CHECK(x.center.x - r >= w.grid.x_range.min);
      CHECK(x.center.x + r <= w.grid.x_range.max);
      CHECK(x.center.y - r >= w.grid.y_range.min);
      CHECK(x.center.y + r <= w.grid.y_range.max);
      CHECK(x.center.z + x.half_extents.z <= w.grid.z_range.max);
      vehicles += x.semantic == SemanticClass::vehicle;
    }
    CHECK(vehicles >= w.min_vehicles);
    bool visible = false;
    for (const auto& box : a.boxes)
      for (const auto& cam : make_rig(w.rig)) visible = visible || geom::project(box.center, cam).valid;
    CHECK(visible);
  }
}

TEST_CASE("zero boxes gives a ground-only scene") {
  CHECK(generate_scene(3, empty_world()).boxes.empty());
}

TEST_CASE("unsatisfiable configurations are rejected") {
  WorldConfig w;
  w.min_boxes = 5;
  w.max_boxes = 2;
  CHECK_THROWS_AS(generate_scene(0, w), std::invalid_argument);
  w = WorldConfig{};
  w.grid.x_range = {-2.0, 2.0};
  CHECK_THROWS_AS(generate_scene(0, w), std::invalid_argument);
  w = WorldConfig{};
  w.barrier_size.min.y = 0.0;
  CHECK_THROWS_AS(generate_scene(0, w), std::invalid_argument);
}

TEST_CASE("box centers cover the four quadrants uniformly over 100 seeds") {
  const WorldConfig w;
  double counts[4] = {};
  double n = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& b : generate_scene(1000 + seed, w).boxes) {
      counts[(b.center.x >= 0 ? 1 : 0) + (b.center.y >= 0 ? 2 : 0)] += 1;
      n += 1;
    }
  }
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - n / 4) * (c - n / 4) / (n / 4);
  CHECK(chi2 < 11.345);  // 3 dof, p = 0.01
}

TEST_CASE("lidar on a ground-only scene lies on z = 0") {
  const auto grid = GridSpec::desk();
  const Tensor p = sample_lidar(Scene{}, grid, 500, 1);
  CHECK(p.dims() == Shape{500, 3});
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(p.at(i, 2) == 0.0);
    CHECK(p.at(i, 0) >= grid.x_range.min);
    CHECK(p.at(i, 0) < grid.x_range.max);
  }
  CHECK(sample_lidar(Scene{}, grid, 1, 1).dims() == Shape{1, 3});
  CHECK_THROWS_AS(sample_lidar(Scene{}, grid, 0, 1), std::invalid_argument);
}

TEST_CASE("lidar point share on a unit box matches the area ratio") {
  const auto grid = GridSpec::desk();
  Scene scene;
  scene.boxes.push_back({{3.0, 2.0, 0.5}, {0.5, 0.5, 0.5}, 0.3, SemanticClass::vehicle});
  const std::size_t n = 20000;
  const Tensor p = sample_lidar(scene, grid, n, 2);
  std::size_t on_box = 0;
  for (std::size_t i = 0; i < n; ++i) on_box += p.at(i, 2) > 0.0;
  const double box_area = 5.0;
  const double ground = 16.0 * 16.0 - 1.0;
  const double q = box_area / (box_area + ground);
  const double sigma = std::sqrt(n * q * (1 - q));
  CHECK(std::abs(static_cast<double>(on_box) - n * q) < 3 * sigma);
}

TEST_CASE("every lidar point lies on a scene surface") {
  const WorldConfig w;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene scene = generate_scene(seed, w);
    const Tensor p = sample_lidar(scene, w.grid, 2000, seed);
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      const Vec3 v{p.at(i, 0), p.at(i, 1), p.at(i, 2)};
      CHECK(surface_distance(scene, v) < 1e-6);
      // Ground points never fall inside a footprint.
      if (v.z == 0.0)
        for (const auto& b : scene.boxes) CHECK_FALSE(b.footprint_contains(v.x, v.y));
    }
  }
}

TEST_CASE("lidar, projection and ray casting are mutually consistent") {
  const WorldConfig w;
  const Scene scene = generate_scene(11, w);
  const Tensor p = sample_lidar(scene, w.grid, 1500, 12);
  std::size_t checked = 0, unoccluded = 0;
  for (const auto& cam : make_rig(w.rig)) {
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      const Vec3 v{p.at(i, 0), p.at(i, 1), p.at(i, 2)};
      const auto proj = geom::project(v, cam);
      if (!proj.valid) continue;
      Vec3 dir = geom::pixel_ray(proj.u, proj.v, cam);
      dir = (1.0 / geom::norm(dir)) * dir;
      const double dist = geom::norm(v - cam.center());
      const auto hit = ray_cast(cam.center(), dir, scene);
      REQUIRE(hit.hit);
      CHECK(hit.t < dist + 0.05);
      ++checked;
      unoccluded += std::abs(hit.t - dist) < 0.05;
    }
  }
  CHECK(checked > 500);
  CHECK(unoccluded > checked / 2);
}

TEST_CASE("teacher embedding invariants") {
  const TeacherEmbedding e(16, 0.2, 7);
  const SemanticClass classes[] = {SemanticClass::ground, SemanticClass::vehicle, SemanticClass::barrier};
  for (auto a : classes) {
    double n = 0.0;
    for (double x : e.class_vector(a)) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0));
    for (auto b : classes) {
      if (a == b) continue;
      double d = 0.0;
      for (std::size_t i = 0; i < 16; ++i) d += e.class_vector(a)[i] * e.class_vector(b)[i];
      CHECK(d < 0.5);
    }
  }
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto f = e.feature(classes[i % 3], {rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(0, 2)});
    double n = 0.0;
    for (double x : f) n += x * x;
    CHECK(std::sqrt(n) >= 0.8 - 1e-12);
    CHECK(std::sqrt(n) <= 1.2 + 1e-12);
  }
  for (double x : e.feature(SemanticClass::none, {0, 0, 0})) CHECK(x == 0.0);
  CHECK_THROWS_AS(TeacherEmbedding(2, 0.2, 1), std::invalid_argument);
  CHECK_THROWS_AS(TeacherEmbedding(8, 1.0, 1), std::invalid_argument);
}

TEST_CASE("a camera facing the sky renders an all-zero map") {
  const auto cam = geom::make_camera(96, 64, 24, 16, 1.0, geom::look_transform({0, 0, 1.6}, 0.0, -1.2));
  const TeacherEmbedding e(16, 0.2, 7);
  const Tensor t = render_teacher(Scene{}, cam, e);
  CHECK(t.dims() == Shape{16, 16, 24});
  for (double v : t.values()) CHECK(v == 0.0);
}

TEST_CASE("a camera centered on a vehicle face sees the vehicle class") {
  Scene scene;
  scene.boxes.push_back({{5.0, 0.0, 1.5}, {1.0, 4.0, 1.5}, 0.0, SemanticClass::vehicle});
  const auto cam = geom::make_camera(96, 64, 24, 16, 1.0, geom::look_transform({0, 0, 1.5}, 0.0, 0.0));
  const TeacherEmbedding e(16, 0.2, 7);
  const Tensor t = render_teacher(scene, cam, e);
  const auto& cv = e.class_vector(SemanticClass::vehicle);
  double ab = 0, aa = 0;
  for (std::size_t c = 0; c < 16; ++c) {
    ab += t.at(c, 8, 12) * cv[c];
    aa += t.at(c, 8, 12) * t.at(c, 8, 12);
  }
  CHECK(ab / std::sqrt(aa) >= 1.0 - 0.2);
  const Tensor again = render_teacher(scene, cam, e);
  CHECK(again == t);
  const Tensor img = render_image(scene, cam, e);
  CHECK(img.dims() == Shape{16, 64, 96});
}

TEST_CASE("BEV labels follow vehicle footprints") {
  GridSpec g;
  g.x_range = {-4.0, 4.0};
  g.y_range = {-4.0, 4.0};
  g.z_range = {0.0, 4.0};
  g.h_cells = g.w_cells = 16;
  g.z_cells = 8;
  const Tensor none = make_bev_labels(Scene{}, g);
  for (double v : none.values()) CHECK(v == 0.0);

  Scene scene;
  scene.boxes.push_back({{0.0, 0.0, 0.8}, {2.0, 1.0, 0.8}, 0.0, SemanticClass::vehicle});
  const Tensor lab = make_bev_labels(scene, g);
  double total = 0.0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      const bool in = i >= 4 && i < 12 && j >= 6 && j < 10;
      CHECK(lab.at(i, j) == (in ? 1.0 : 0.0));
      total += lab.at(i, j);
    }
  CHECK(total == 32.0);

  scene.boxes[0].yaw = std::numbers::pi;
  CHECK(make_bev_labels(scene, g) == lab);
  scene.boxes[0].semantic = SemanticClass::barrier;
  CHECK(make_bev_labels(scene, g) == Tensor({16, 16}));
}

TEST_CASE("dataset write and read round trip") {
  WorldConfig w;
  w.lidar_points = 300;
  std::vector<SceneSample> samples;
  for (std::size_t i = 0; i < 3; ++i) samples.push_back(generate_sample(5, i, w));
  const auto dir = testutil::scratch_dir("dataset_rt");
  data::write_dataset(samples, w.grid, dir);

  const auto ids = data::read_manifest(dir);
  CHECK(ids == std::vector<std::string>{"s00000", "s00001", "s00002"});
  const auto back = data::read_dataset(dir);
  CHECK(back.grid == w.grid);
  REQUIRE(back.samples.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = samples[i];
    const auto& b = back.samples[i];
    CHECK(b.id == a.id);
    CHECK(b.points == a.points);
    CHECK(b.bev_labels == a.bev_labels);
    REQUIRE(b.cameras.size() == a.cameras.size());
    for (std::size_t c = 0; c < a.cameras.size(); ++c) {
      CHECK(b.teacher_maps[c] == a.teacher_maps[c]);
      CHECK(b.images[c] == a.images[c]);
      CHECK(b.cameras[c].fx == a.cameras[c].fx);
      CHECK(b.cameras[c].ego_to_camera.translation.z == a.cameras[c].ego_to_camera.translation.z);
    }
  }

  SUBCASE("truncated tensor file") {
    const auto f = dir / "s00001.points.oft";
    std::filesystem::resize_file(f, std::filesystem::file_size(f) - 5);
    try {
      data::read_dataset(dir);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("s00001.points.oft") != std::string::npos);
    }
  }
  SUBCASE("corrupt magic") {
    std::fstream f(dir / "s00002.labels.oft", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    try {
      data::read_dataset(dir);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("s00002.labels.oft") != std::string::npos);
    }
  }
  SUBCASE("missing manifest") {
    std::filesystem::remove(dir / "manifest.txt");
    CHECK_THROWS(data::read_dataset(dir));
  }
}

TEST_CASE("rig text round trip") {
  const auto cams = make_rig(RigConfig::six_camera());
  const auto back = data::parse_rig(data::format_rig(cams), "rig");
  REQUIRE(back.size() == 6);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(back[c].fx == cams[c].fx);
    CHECK(back[c].feature_width == cams[c].feature_width);
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) CHECK(back[c].ego_to_camera.rotation(r, k) == cams[c].ego_to_camera.rotation(r, k));
  }
  CHECK_THROWS(data::parse_rig("1 2 3\n", "rig"));
}
