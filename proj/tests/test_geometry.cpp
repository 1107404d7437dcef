#include <doctest.h>

#include <cmath>
#include <numbers>

#include "occfeat/geometry.hpp"
#include "occfeat/grid.hpp"
#include "occfeat/rng.hpp"
#include "test_util.hpp"

using namespace occfeat;
using namespace occfeat::geom;

namespace {

RigidTransform random_transform(Rng& rng) {
  const double yaw = rng.uniform(-3.0, 3.0), pitch = rng.uniform(-1.0, 1.0);
  return look_transform({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 3)}, yaw, pitch);
}

CameraModel test_camera(Rng& rng) {
  return make_camera(96, 64, 24, 16, std::numbers::pi / 2, random_transform(rng));
}

}  // namespace

TEST_CASE("look_transform produces rigid extrinsics") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(random_transform(rng).is_valid());
  RigidTransform bad;
  bad.rotation(0, 0) = 2.0;
  CHECK_FALSE(bad.is_valid());
}

TEST_CASE("compose with inverse is the identity on 1000 points") {
  Rng rng(2);
  const auto t = random_transform(rng);
  const auto id = t.compose(t.inverse());
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 5)};
    CHECK(norm(id.apply(p) - p) < 1e-9);
    CHECK(norm(t.inverse().apply(t.apply(p)) - p) < 1e-9);
  }
}

TEST_CASE("camera looking along +x maps ego axes to camera axes") {
  const auto t = look_transform({0, 0, 1}, 0.0, 0.0);
  const Vec3 pc = t.apply({5, 0, 1});
  CHECK(pc.z == doctest::Approx(5.0));
  CHECK(std::abs(pc.x) < 1e-12);
  CHECK(t.apply({5, 1, 1}).x < 0.0);  // ego left is camera -x
  CHECK(t.apply({5, 0, 2}).y < 0.0);  // ego up is camera -y
}

TEST_CASE("on-axis point projects to the principal point") {
  Rng rng(3);
  const auto cam = test_camera(rng);
  const Vec3 c = cam.center();
  const Vec3 axis = cam.ego_to_camera.rotation.transposed() * Vec3{0, 0, 1};
  const auto p = project(c + 7.5 * axis, cam);
  CHECK(p.valid);
  CHECK(p.u == doctest::Approx(cam.cx));
  CHECK(p.v == doctest::Approx(cam.cy));
  CHECK(p.depth == doctest::Approx(7.5));
  CHECK_FALSE(project(c - 2.0 * axis, cam).valid);
  CHECK_FALSE(project(c, cam).valid);
}

TEST_CASE("projection matches the 3x4 matrix oracle") {
  Rng rng(4);
  for (int n = 0; n < 200; ++n) {
    const auto cam = test_camera(rng);
    const Vec3 p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-2, 4)};
    double k[3][3] = {{cam.fx, 0, cam.cx}, {0, cam.fy, cam.cy}, {0, 0, 1}};
    double rt[3][4];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rt[r][c] = cam.ego_to_camera.rotation(r, c);
      rt[r][3] = cam.ego_to_camera.translation[r];
    }
    double pm[3][4] = {};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 3; ++i) pm[r][c] += k[r][i] * rt[i][c];
    const double hp[4] = {p.x, p.y, p.z, 1.0};
    double x[3] = {};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) x[r] += pm[r][c] * hp[c];
    const auto proj = project(p, cam);
    CHECK(proj.depth == doctest::Approx(x[2]).epsilon(1e-12));
    if (x[2] > kDepthEps) {
      CHECK(std::abs(proj.u - x[0] / x[2]) < 1e-9);
      CHECK(std::abs(proj.v - x[1] / x[2]) < 1e-9);
      const bool inside = x[0] / x[2] >= 0 && x[0] / x[2] < 96 && x[1] / x[2] >= 0 && x[1] / x[2] < 64;
      CHECK(proj.valid == inside);
    } else {
      CHECK_FALSE(proj.valid);
    }
  }
}

TEST_CASE("projection is invariant to jointly scaling camera-frame coordinates") {
  Rng rng(5);
  const auto cam = test_camera(rng);
  const auto inv = cam.ego_to_camera.inverse();
  for (int n = 0; n < 100; ++n) {
    const Vec3 pc{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 10)};
    const double s = rng.uniform(0.1, 10.0);
    const auto a = project(inv.apply(pc), cam);
    const auto b = project(inv.apply(s * pc), cam);
    CHECK(std::abs(a.u - b.u) < 1e-9);
    CHECK(std::abs(a.v - b.v) < 1e-9);
  }
}

TEST_CASE("pixel_to_feature conventions") {
  CameraModel cam;
  cam.image_width = 64;
  cam.image_height = 32;
  cam.feature_width = 16;
  cam.feature_height = 8;
  CHECK(pixel_to_feature(0.0, 0.0, cam).uf == doctest::Approx(-0.375));
  const auto mid = pixel_to_feature(31.5, 15.5, cam);
  CHECK(mid.uf == doctest::Approx(7.5));
  CHECK(mid.vf == doctest::Approx(3.5));
  const auto back = feature_to_pixel(mid.uf, mid.vf, cam);
  CHECK(back[0] == doctest::Approx(31.5));
  CameraModel same = cam;
  same.feature_width = 64;
  CHECK(pixel_to_feature(12.25, 0, same).uf == doctest::Approx(12.25));
}

TEST_CASE("bilinear sampling: lattice points, midpoints, bounds") {
  const Tensor map = testutil::random_tensor({2, 4, 5}, 6);
  const auto s = bilinear_sample(map, 3.0, 2.0);
  CHECK(s.in_bounds);
  CHECK(s.values[0] == map.at(0, 2, 3));
  CHECK(s.values[1] == map.at(1, 2, 3));
  const auto m = bilinear_sample(map, 1.5, 1.0);
  CHECK(m.values[0] == doctest::Approx(0.5 * (map.at(0, 1, 1) + map.at(0, 1, 2))));
  CHECK(bilinear_sample(map, 4.0, 3.0).values[0] == map.at(0, 3, 4));
  for (auto [u, v] : {std::pair{-0.01, 1.0}, {4.01, 1.0}, {1.0, 3.2}, {1.0, -1.0}}) {
    const auto out = bilinear_sample(map, u, v);
    CHECK_FALSE(out.in_bounds);
    CHECK(out.values[0] == 0.0);
  }
}

TEST_CASE("bilinear sampling matches explicit weights and reproduces affine fields") {
  Rng rng(7);
  const Tensor map = testutil::random_tensor({1, 6, 7}, 8);
  Tensor affine({1, 6, 7});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 7; ++c) affine.at(0, r, c) = 0.3 + 1.7 * c - 0.9 * r;
  for (int n = 0; n < 200; ++n) {
    const double u = rng.uniform(0.0, 6.0), v = rng.uniform(0.0, 5.0);
    const auto x0 = static_cast<std::size_t>(std::floor(u)), y0 = static_cast<std::size_t>(std::floor(v));
    const double du = u - x0, dv = v - y0;
    const double want = (1 - du) * (1 - dv) * map.at(0, y0, x0) + du * (1 - dv) * map.at(0, y0, x0 + 1) +
                        (1 - du) * dv * map.at(0, y0 + 1, x0) + du * dv * map.at(0, y0 + 1, x0 + 1);
    CHECK(std::abs(bilinear_sample(map, u, v).values[0] - want) < 1e-12);
    CHECK(std::abs(bilinear_sample(affine, u, v).values[0] - (0.3 + 1.7 * u - 0.9 * v)) < 1e-9);
  }
}

TEST_CASE("bilinear backward matches finite differences") {
  Rng rng(9);
  Tensor map = testutil::random_tensor({3, 4, 4}, 10);
  const double u = 1.3, v = 2.6;
  const std::vector<double> g{0.4, -1.1, 0.7};
  Tensor grad(map.dims());
  bilinear_sample_backward(g, u, v, grad);
  const double h = 1e-5;
  for (std::size_t i = 0; i < map.size(); ++i) {
    auto f = [&] {
      const auto s = bilinear_sample(map, u, v);
      return g[0] * s.values[0] + g[1] * s.values[1] + g[2] * s.values[2];
    };
    const double saved = map[i];
    map[i] = saved + h;
    const double up = f();
    map[i] = saved - h;
    const double down = f();
    map[i] = saved;
    const double num = (up - down) / (2 * h);
    CHECK(std::abs(num - grad[i]) <= 1e-6 * std::max({std::abs(num), std::abs(grad[i]), 1e-6}));
  }
}

TEST_CASE("ray casting against the ground") {
  const auto down = ray_cast({0, 0, 2}, {0, 0, -1}, {}, true);
  CHECK(down.hit);
  CHECK(down.t == doctest::Approx(2.0));
  CHECK(down.semantic == SemanticClass::ground);
  CHECK_FALSE(ray_cast({0, 0, 2}, {0, 0, 1}, {}, true).hit);
  CHECK_THROWS_AS(ray_cast({0, 0, 2}, {0, 0, 0}, {}, true), std::invalid_argument);
}

TEST_CASE("ray casting agrees with a dense ray-marching oracle") {
  Rng rng(11);
  int hits = 0;
  for (int n = 0; n < 200; ++n) {
    OrientedBox box{{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 1.5)},
                    {rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.0)},
                    0.0,
                    SemanticClass::vehicle};
    const Vec3 origin{rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(0.2, 3)};
    Vec3 target{box.center.x + rng.uniform(-2, 2), box.center.y + rng.uniform(-2, 2),
                box.center.z + rng.uniform(-1, 1)};
    Vec3 dir = target - origin;
    if (norm(dir) < 1e-3) continue;
    dir = (1.0 / norm(dir)) * dir;
    if (box.contains(origin)) continue;
    auto inside = [&](Vec3 p) {
      return std::abs(p.x - box.center.x) <= box.half_extents.x &&
             std::abs(p.y - box.center.y) <= box.half_extents.y &&
             std::abs(p.z - box.center.z) <= box.half_extents.z;
    };
    double t_march = -1.0;
    for (double t = 0.0; t < 20.0; t += 1e-3) {
      if (inside(origin + t * dir)) {
        t_march = t;
        break;
      }
    }
    const OrientedBox boxes[] = {box};
    const auto hit = ray_cast(origin, dir, boxes, false);
    CHECK(hit.hit == (t_march >= 0.0));
    if (hit.hit && t_march >= 0.0) {
      ++hits;
      CHECK(std::abs(hit.t - t_march) < 2e-3);
      CHECK(hit.semantic == SemanticClass::vehicle);
    }
  }
  CHECK(hits > 20);
}

TEST_CASE("rotated box containment and footprint") {
  OrientedBox box{{1, 1, 0.5}, {2, 0.5, 0.5}, std::numbers::pi / 2, SemanticClass::barrier};
  CHECK(box.footprint_contains(1.0, 2.9));
  CHECK_FALSE(box.footprint_contains(2.9, 1.0));
  CHECK(box.contains({1.2, 0.0, 0.9}));
  CHECK_FALSE(box.contains({1.2, 0.0, 1.1}));
}

TEST_CASE("camera validation") {
  CameraModel cam;
  cam.fx = 0.0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam.fx = 1.0;
  cam.feature_width = 2;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST_CASE("voxel centers") {
  GridSpec g;
  g.x_range = {0.0, 10.0};
  g.h_cells = 10;
  CHECK(g.voxel_center({0, 0, 0}).x == doctest::Approx(0.5));
  const auto n = GridSpec::nuscenes();
  CHECK(n.voxel_center({0, 100, 0}).x == doctest::Approx(0.25));
  CHECK(n.h_cells == 200);
  CHECK_THROWS_AS(g.voxel_center({0, 10, 0}), std::out_of_range);
  const auto d = GridSpec::desk();
  CHECK(d.voxel_count() == 16 * 16 * 8);
  CHECK(d.voxel_size_x() == 1.0);
  CHECK(d.voxel_size_z() == 0.5);
}

TEST_CASE("locate is half-open and inverts voxel_center") {
  const auto g = GridSpec::desk();
  for (std::size_t k = 0; k < g.z_cells; ++k)
    for (std::size_t i = 0; i < g.h_cells; ++i)
      for (std::size_t j = 0; j < g.w_cells; ++j) {
        const auto loc = g.locate(g.voxel_center({k, i, j}));
        REQUIRE(loc);
        CHECK(*loc == VoxelIndex{k, i, j});
      }
  CHECK_FALSE(g.locate({8.0, 0.0, 1.0}));
  CHECK(g.locate({-8.0, 0.0, 1.0}));
  CHECK(g.locate({1.0, 0.0, 0.0})->i == 9);
  CHECK(g.locate({0.0, 0.0, 0.0})->k == 0);
  CHECK_FALSE(g.locate({0.0, 0.0, 4.0}));
  CHECK_FALSE(g.locate({0.0, 0.0, -1e-12}));
}

TEST_CASE("grid text round trip and validation") {
  const auto g = GridSpec::nuscenes();
  CHECK(parse_grid(format_grid(g)) == g);
  CHECK_THROWS_AS(parse_grid("1 2 3"), std::invalid_argument);
  GridSpec bad;
  bad.x_range = {1.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = GridSpec{};
  bad.z_cells = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
