#include "occfeat/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "occfeat/rng.hpp"

namespace occfeat::synth {

using geom::Vec3;

RigConfig RigConfig::six_camera() {
  RigConfig r;
  r.cameras = 6;
  r.hfov = 70.0 * std::numbers::pi / 180.0;
  return r;
}

// ---------------------------------------------------------------------------

TeacherEmbedding::TeacherEmbedding(std::size_t dim, double alpha, std::uint64_t seed)
    : dim_(dim), alpha_(alpha) {
  if (dim < 3) throw std::invalid_argument("TeacherEmbedding: need at least 3 dims");
  if (!(alpha >= 0.0) || !(alpha < 1.0)) throw std::invalid_argument("TeacherEmbedding: alpha in [0,1)");
  Rng rng(seed);
  // Gram-Schmidt on Gaussian draws: the class vectors are orthonormal.
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& u : class_vectors_) {
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d += u[i] * v[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= d * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    class_vectors_.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < dim; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phi = rng.uniform(-0.5, 0.5);
    const double mag = rng.uniform(0.3, 0.9);
    frequencies_.push_back({mag * std::cos(theta) * std::cos(phi),
                            mag * std::sin(theta) * std::cos(phi), mag * std::sin(phi)});
    phases_.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
}

const std::vector<double>& TeacherEmbedding::class_vector(SemanticClass c) const {
  const int idx = static_cast<int>(c);
  if (idx < 0 || idx > 2) throw std::invalid_argument("TeacherEmbedding: no vector for class");
  return class_vectors_[static_cast<std::size_t>(idx)];
}

std::vector<double> TeacherEmbedding::feature(SemanticClass c, const Vec3& hit) const {
  std::vector<double> f(dim_, 0.0);
  if (c == SemanticClass::none) return f;
  std::vector<double> m(dim_);
  double n = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    m[i] = std::sin(geom::dot(frequencies_[i], hit) + phases_[i]);
    n += m[i] * m[i];
  }
  n = std::sqrt(n);
  const double scale = n > 1e-9 ? alpha_ / n : 0.0;
  const auto& base = class_vector(c);
  for (std::size_t i = 0; i < dim_; ++i) f[i] = base[i] + scale * m[i];
  return f;
}

// ---------------------------------------------------------------------------

std::vector<geom::CameraModel> make_rig(const RigConfig& rig) {
  if (rig.cameras == 0) throw std::invalid_argument("make_rig: no cameras");
  std::vector<geom::CameraModel> cams;
  for (std::size_t c = 0; c < rig.cameras; ++c) {
    const double yaw = 2.0 * std::numbers::pi * static_cast<double>(c) /
                       static_cast<double>(rig.cameras);
    const Vec3 pos{rig.offset * std::cos(yaw), rig.offset * std::sin(yaw), rig.height};
    cams.push_back(geom::make_camera(rig.image_width, rig.image_height, rig.feature_width,
                                     rig.feature_height, rig.hfov,
                                     geom::look_transform(pos, yaw, rig.pitch)));
  }
  return cams;
}

namespace {

double footprint_radius(const OrientedBox& b) { return std::hypot(b.half_extents.x, b.half_extents.y); }

bool any_box_visible(const std::vector<OrientedBox>& boxes,
                     const std::vector<geom::CameraModel>& cams) {
  for (const auto& b : boxes) {
    for (const auto& cam : cams) {
      if (geom::project(b.center, cam).valid) return true;
    }
  }
  return false;
}

Vec3 draw_extents(Rng& rng, const BoxSizeRange& r) {
  const double x = rng.uniform(r.min.x, r.max.x);
  const double y = rng.uniform(r.min.y, r.max.y);
  return {x, y, rng.uniform(r.min.z, r.max.z)};
}

OrientedBox draw_box(Rng& rng, const WorldConfig& config, bool force_vehicle) {
  OrientedBox b;
  const bool vehicle = rng.uniform() < config.vehicle_fraction;
  if (vehicle || force_vehicle) {
    b.semantic = SemanticClass::vehicle;
    b.half_extents = draw_extents(rng, config.vehicle_size);
  } else {
    b.semantic = SemanticClass::barrier;
    b.half_extents = draw_extents(rng, config.barrier_size);
  }
  b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
  b.center.z = b.half_extents.z;
  return b;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const WorldConfig& config) {
  config.grid.validate();
  if (config.min_boxes > config.max_boxes) {
    throw std::invalid_argument("generate_scene: min_boxes exceeds max_boxes");
  }
  const auto& g = config.grid;
  // Largest possible footprint radius of either class.
  for (const auto* r : {&config.vehicle_size, &config.barrier_size}) {
    if (!(r->min.x > 0 && r->min.y > 0 && r->min.z > 0 && r->min.x <= r->max.x &&
          r->min.y <= r->max.y && r->min.z <= r->max.z)) {
      throw std::invalid_argument("generate_scene: invalid box size range");
    }
  }
  const Vec3 v = config.vehicle_size.max, b = config.barrier_size.max;
  const double r_max = std::max(std::hypot(v.x, v.y), std::hypot(b.x, b.y));
  if (config.max_boxes > 0 &&
      (g.x_range.extent() <= 2.0 * r_max || g.y_range.extent() <= 2.0 * r_max)) {
    throw std::invalid_argument("generate_scene: grid footprint too small to place boxes");
  }
  if (config.max_boxes > 0 && g.z_range.max <= 2.0 * std::max(v.z, b.z)) {
    throw std::invalid_argument("generate_scene: grid too low to contain boxes");
  }
  const auto cams = make_rig(config.rig);

  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Scene scene;
    scene.seed = seed;
    const std::size_t n = config.min_boxes + rng.index(config.max_boxes - config.min_boxes + 1);
    for (std::size_t b = 0; b < n; ++b) {
      for (int tries = 0; tries < 200; ++tries) {
        OrientedBox box = draw_box(rng, config, b < config.min_vehicles);
        const double r = footprint_radius(box);
        box.center.x = rng.uniform(g.x_range.min + r, g.x_range.max - r);
        box.center.y = rng.uniform(g.y_range.min + r, g.y_range.max - r);
        const double reach = config.ego_clearance + r;
        if (std::abs(box.center.x) < reach && std::abs(box.center.y) < reach) continue;
        const bool overlaps = std::any_of(scene.boxes.begin(), scene.boxes.end(), [&](const auto& o) {
          return std::hypot(o.center.x - box.center.x, o.center.y - box.center.y) <
                 r + footprint_radius(o) + config.box_gap;
        });
        if (overlaps) continue;
        scene.boxes.push_back(box);
        break;
      }
    }
    const auto vehicles = std::count_if(scene.boxes.begin(), scene.boxes.end(), [](const auto& b) {
      return b.semantic == SemanticClass::vehicle;
    });
    if (static_cast<std::size_t>(vehicles) < std::min(config.min_vehicles, n)) continue;
    if (scene.boxes.empty() || any_box_visible(scene.boxes, cams)) return scene;
  }
  throw std::runtime_error("generate_scene: could not place a valid scene");
}

// ---------------------------------------------------------------------------

namespace {

struct Surface {
  const OrientedBox* box = nullptr;  // null for ground
  int face = 0;                      // 0:+x 1:-x 2:+y 3:-y 4:top
  double area = 0.0;
};

Vec3 box_to_world(const OrientedBox& b, Vec3 local) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  return {b.center.x + c * local.x - s * local.y, b.center.y + s * local.x + c * local.y,
          b.center.z + local.z};
}

Vec3 sample_face(const OrientedBox& b, int face, Rng& rng) {
  const Vec3 h = b.half_extents;
  const double a = rng.uniform(-1.0, 1.0);
  const double c = rng.uniform(-1.0, 1.0);
  switch (face) {
    case 0: return box_to_world(b, {h.x, a * h.y, c * h.z});
    case 1: return box_to_world(b, {-h.x, a * h.y, c * h.z});
    case 2: return box_to_world(b, {a * h.x, h.y, c * h.z});
    case 3: return box_to_world(b, {a * h.x, -h.y, c * h.z});
    default: return box_to_world(b, {a * h.x, c * h.y, h.z});
  }
}

}  // namespace

Tensor sample_lidar(const Scene& scene, const GridSpec& grid, std::size_t n_points,
                    std::uint64_t seed) {
  if (n_points == 0) throw std::invalid_argument("sample_lidar: n_points must be positive");
  std::vector<Surface> surfaces;
  double ground = grid.x_range.extent() * grid.y_range.extent();
  for (const auto& b : scene.boxes) {
    const Vec3 h = b.half_extents;
    surfaces.push_back({&b, 0, 4.0 * h.y * h.z});
    surfaces.push_back({&b, 1, 4.0 * h.y * h.z});
    surfaces.push_back({&b, 2, 4.0 * h.x * h.z});
    surfaces.push_back({&b, 3, 4.0 * h.x * h.z});
    surfaces.push_back({&b, 4, 4.0 * h.x * h.y});
    ground -= 4.0 * h.x * h.y;
  }
  surfaces.push_back({nullptr, 0, std::max(ground, 0.0)});
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& s : surfaces) cumulative.push_back(total += s.area);

  Rng rng(seed);
  Tensor points({n_points, 3});
  for (std::size_t n = 0; n < n_points; ++n) {
    const double pick = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const auto& s = surfaces[std::min<std::size_t>(it - cumulative.begin(), surfaces.size() - 1)];
    Vec3 p;
    if (s.box) {
      p = sample_face(*s.box, s.face, rng);
    } else {
      for (int tries = 0;; ++tries) {
        p = {rng.uniform(grid.x_range.min, grid.x_range.max),
             rng.uniform(grid.y_range.min, grid.y_range.max), 0.0};
        const bool covered = std::any_of(scene.boxes.begin(), scene.boxes.end(), [&](const auto& b) {
          return b.footprint_contains(p.x, p.y);
        });
        if (!covered) break;
        if (tries > 100000) throw std::runtime_error("sample_lidar: ground fully covered");
      }
    }
    points.at(n, 0) = p.x;
    points.at(n, 1) = p.y;
    points.at(n, 2) = p.z;
  }
  return points;
}

// ---------------------------------------------------------------------------

geom::RayHit ray_cast(const Vec3& origin, const Vec3& direction, const Scene& scene) {
  return geom::ray_cast(origin, direction, scene.boxes, true);
}

namespace {

// Renders on an out_h x out_w lattice whose cell centers map to image pixels
// by the align-centers convention. Values are rounded to float precision so
// that f32 storage is lossless.
Tensor render_lattice(const Scene& scene, const geom::CameraModel& cam,
                      const TeacherEmbedding& embedding, std::size_t out_w, std::size_t out_h) {
  const std::size_t dim = embedding.dim();
  Tensor out({dim, out_h, out_w});
  const Vec3 origin = cam.center();
  const double sx = static_cast<double>(cam.image_width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(cam.image_height) / static_cast<double>(out_h);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      const double u = (static_cast<double>(c) + 0.5) * sx - 0.5;
      const double v = (static_cast<double>(r) + 0.5) * sy - 0.5;
      const Vec3 dir = geom::pixel_ray(u, v, cam);
      const auto hit = ray_cast(origin, dir, scene);
      if (!hit.hit) continue;
      const Vec3 p = origin + (hit.t / geom::norm(dir)) * dir;
      const auto f = embedding.feature(hit.semantic, p);
      for (std::size_t ch = 0; ch < dim; ++ch) {
        out.at(ch, r, c) = static_cast<double>(static_cast<float>(f[ch]));
      }
    }
  }
  return out;
}

}  // namespace

Tensor render_teacher(const Scene& scene, const geom::CameraModel& cam,
                      const TeacherEmbedding& embedding) {
  return render_lattice(scene, cam, embedding, cam.feature_width, cam.feature_height);
}

Tensor render_image(const Scene& scene, const geom::CameraModel& cam,
                    const TeacherEmbedding& embedding) {
  return render_lattice(scene, cam, embedding, cam.image_width, cam.image_height);
}

Tensor make_bev_labels(const Scene& scene, const GridSpec& grid) {
  Tensor labels({grid.h_cells, grid.w_cells}, kBackgroundLabel);
  for (std::size_t i = 0; i < grid.h_cells; ++i) {
    for (std::size_t j = 0; j < grid.w_cells; ++j) {
      const Vec3 c = grid.bev_center(i, j);
      for (const auto& b : scene.boxes) {
        if (b.semantic == SemanticClass::vehicle && b.footprint_contains(c.x, c.y)) {
          labels.at(i, j) = kVehicleLabel;
          break;
        }
      }
    }
  }
  return labels;
}

SemanticClass classify_point(const Scene& scene, const Vec3& p, double tol) {
  for (const auto& b : scene.boxes) {
    if (b.contains(p, tol)) return b.semantic;
  }
  return std::abs(p.z) <= tol ? SemanticClass::ground : SemanticClass::none;
}

// ---------------------------------------------------------------------------

SceneSample make_sample(const std::string& id, const Scene& scene, const WorldConfig& config,
                        std::uint64_t lidar_seed) {
  const TeacherEmbedding embedding(config.feature_dim, config.alpha, config.embedding_seed);
  SceneSample s;
  s.id = id;
  s.points = sample_lidar(scene, config.grid, config.lidar_points, lidar_seed);
  s.cameras = make_rig(config.rig);
  for (const auto& cam : s.cameras) {
    s.teacher_maps.push_back(render_teacher(scene, cam, embedding));
    s.images.push_back(render_image(scene, cam, embedding));
  }
  s.bev_labels = make_bev_labels(scene, config.grid);
  return s;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

SceneSample generate_sample(std::uint64_t seed, std::size_t index, const WorldConfig& config,
                            Scene* scene_out) {
  const std::string id = sample_id(index);
  Scene scene = generate_scene(derive_seed(seed, "scene/" + id), config);
  SceneSample s = make_sample(id, scene, config, derive_seed(seed, "lidar/" + id));
  if (scene_out) *scene_out = std::move(scene);
  return s;
}

}  // namespace occfeat::synth
