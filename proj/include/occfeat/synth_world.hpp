#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occfeat/geometry.hpp"
#include "occfeat/grid.hpp"
#include "occfeat/tensor.hpp"

namespace occfeat::synth {

using geom::OrientedBox;
using geom::SemanticClass;

struct Scene {
  std::vector<OrientedBox> boxes;
  std::uint64_t seed = 0;
};

struct RigConfig {
  std::size_t cameras = 4;  // evenly spaced in yaw, first one facing +x
  std::size_t image_width = 96;
  std::size_t image_height = 64;
  std::size_t feature_width = 24;
  std::size_t feature_height = 16;
  double hfov = 1.5707963267948966;
  double height = 1.6;   // meters above ground
  double offset = 0.5;   // meters from the ego origin along each heading
  double pitch = 0.12;   // downward tilt, radians

  static RigConfig desk() { return {}; }
  // Six cameras at 60 degree spacing, wider images.
  static RigConfig six_camera();
};

// Half-extents are drawn uniformly per axis.
struct BoxSizeRange {
  geom::Vec3 min, max;
};

struct WorldConfig {
  GridSpec grid = GridSpec::desk();
  RigConfig rig;
  std::size_t min_boxes = 3;
  std::size_t max_boxes = 7;
  double vehicle_fraction = 0.6;
  BoxSizeRange vehicle_size{{1.8, 0.85, 0.7}, {2.3, 1.0, 0.85}};
  // Barriers share the vehicle footprint by default, so occupancy alone
  // cannot tell the classes apart and only the teacher semantics can.
  BoxSizeRange barrier_size = vehicle_size;
  // Up to min_vehicles boxes of every scene are vehicles, fewer only when the
  // scene has fewer boxes.
  std::size_t min_vehicles = 1;
  // No box footprint may enter the square |x|,|y| < ego_clearance.
  double ego_clearance = 2.0;
  // Minimum gap between box footprints.
  double box_gap = 0.4;
  std::size_t lidar_points = 6000;
  std::size_t feature_dim = 16;  // N_y
  double alpha = 0.8;            // positional modulation amplitude
  std::uint64_t embedding_seed = 7;
};

// Frozen stand-in for a self-supervised image encoder: each semantic class
// owns a unit vector, modulated by a smooth function of the hit position.
class TeacherEmbedding {
 public:
  TeacherEmbedding(std::size_t dim, double alpha, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  double alpha() const { return alpha_; }
  const std::vector<double>& class_vector(SemanticClass c) const;
  // class_vector(c) + alpha * m(p) with |m(p)| = 1; zero for SemanticClass::none.
  std::vector<double> feature(SemanticClass c, const geom::Vec3& hit) const;

 private:
  std::size_t dim_;
  double alpha_;
  std::vector<std::vector<double>> class_vectors_;  // ground, vehicle, barrier
  std::vector<geom::Vec3> frequencies_;
  std::vector<double> phases_;
};

std::vector<geom::CameraModel> make_rig(const RigConfig& rig);

// Deterministic in (seed, config). Throws std::invalid_argument when the box
// placement range is empty.
Scene generate_scene(std::uint64_t seed, const WorldConfig& config);

// Area-weighted uniform samples on the exposed surfaces: ground inside the grid
// footprint but outside boxes, plus box sides and tops. Returns [n, 3].
Tensor sample_lidar(const Scene& scene, const GridSpec& grid, std::size_t n_points,
                    std::uint64_t seed);

// [N_y, H_f, W_f]: rays through the pixel at each feature-cell center.
Tensor render_teacher(const Scene& scene, const geom::CameraModel& cam,
                      const TeacherEmbedding& embedding);
// [N_y, H_img, W_img]: rays through every pixel; the student's input.
Tensor render_image(const Scene& scene, const geom::CameraModel& cam,
                    const TeacherEmbedding& embedding);

inline constexpr double kBackgroundLabel = 0.0;
inline constexpr double kVehicleLabel = 1.0;

// [H_B, W_B] with 1 where the cell center lies inside a vehicle footprint.
Tensor make_bev_labels(const Scene& scene, const GridSpec& grid);

geom::RayHit ray_cast(const geom::Vec3& origin, const geom::Vec3& direction, const Scene& scene);

// Semantic class of the surface nearest to p among scene primitives
// (boxes that contain p, else ground when p.z is at ground level, else none).
SemanticClass classify_point(const Scene& scene, const geom::Vec3& p, double tol = 1e-6);

struct SceneSample {
  std::string id;
  Tensor points;                          // [N, 3]
  std::vector<geom::CameraModel> cameras;
  std::vector<Tensor> teacher_maps;       // per camera [N_y, H_f, W_f]
  std::vector<Tensor> images;             // per camera [N_y, H_img, W_img]
  Tensor bev_labels;                      // [H_B, W_B]
};

SceneSample make_sample(const std::string& id, const Scene& scene, const WorldConfig& config,
                        std::uint64_t lidar_seed);

// Scene + sample for the `index`-th item of a dataset generated from `seed`.
std::string sample_id(std::size_t index);
SceneSample generate_sample(std::uint64_t seed, std::size_t index, const WorldConfig& config,
                            Scene* scene_out = nullptr);

}  // namespace occfeat::synth
