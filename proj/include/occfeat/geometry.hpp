#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "occfeat/tensor.hpp"

namespace occfeat::geom {

// Ego frame: x forward, y left, z up, origin on the ground below the sensors.
// Camera frame: x right, y down, z along the optical axis.
// Continuous pixel coordinates put the center of pixel (col i, row j) at (i, j).

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

double dot(Vec3 a, Vec3 b);
Vec3 cross(Vec3 a, Vec3 b);
double norm(Vec3 a);

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
  Vec3 operator*(Vec3 v) const;
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double determinant() const;
  friend bool operator==(const Mat3&, const Mat3&) = default;
};

struct RigidTransform {
  Mat3 rotation;
  Vec3 translation;

  Vec3 apply(Vec3 p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  // (this * other)(p) == this(other(p))
  RigidTransform compose(const RigidTransform& other) const;
  // R^T R = I and det R = +1 within tol.
  bool is_valid(double tol = 1e-9) const;
  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  std::size_t image_width = 1, image_height = 1;
  std::size_t feature_width = 1, feature_height = 1;
  RigidTransform ego_to_camera;

  // Camera center in the ego frame.
  Vec3 center() const;
  // Throws std::invalid_argument on fx/fy <= 0, feature map larger than the
  // image, or a non-rigid extrinsic.
  void validate() const;
  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

// Camera at `position` looking along heading `yaw` (radians, about +z from +x),
// tilted down by `pitch` radians.
RigidTransform look_transform(Vec3 position, double yaw, double pitch);

// Pinhole camera with the given horizontal field of view (radians).
CameraModel make_camera(std::size_t image_width, std::size_t image_height,
                        std::size_t feature_width, std::size_t feature_height, double hfov,
                        const RigidTransform& ego_to_camera);

inline constexpr double kDepthEps = 1e-3;

struct Projection {
  double u = 0.0, v = 0.0, depth = 0.0;
  bool valid = false;
};

Projection project(Vec3 point, const CameraModel& cam);

struct FeatureCoord {
  double uf = 0.0, vf = 0.0;
};

// Align-centers mapping: uf = (u + 0.5) * W_f / W_img - 0.5.
FeatureCoord pixel_to_feature(double u, double v, const CameraModel& cam);
// Inverse of pixel_to_feature.
std::array<double, 2> feature_to_pixel(double uf, double vf, const CameraModel& cam);

// Four-neighbour bilinear weights on an H x W lattice. `offsets` index the
// flattened (row * W + col) cell. in_bounds is false when any neighbour falls
// outside the lattice; weights are then zero.
struct BilinearTaps {
  std::array<std::size_t, 4> offsets{};
  std::array<double, 4> weights{};
  double du = 0.0, dv = 0.0;  // fractional offsets from the first neighbour
  bool in_bounds = false;
};

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double uf, double vf);

struct BilinearSample {
  std::vector<double> values;  // one per channel, zero when out of bounds
  bool in_bounds = false;
};

// map [C,H,W]. Evaluated as nested lerps, so a constant map returns the
// constant exactly.
BilinearSample bilinear_sample(const Tensor& map, double uf, double vf);
// Accumulates the gradient of sum(grad * sample) into grad_map [C,H,W].
void bilinear_sample_backward(std::span<const double> grad, double uf, double vf, Tensor& grad_map);

// ---------------------------------------------------------------------------
// Ray casting against the ground plane z = 0 and yaw-rotated boxes.

enum class SemanticClass : int { none = -1, ground = 0, vehicle = 1, barrier = 2 };

struct OrientedBox {
  Vec3 center;
  Vec3 half_extents;
  double yaw = 0.0;
  SemanticClass semantic = SemanticClass::vehicle;

  Vec3 to_local(Vec3 p) const;
  bool contains(Vec3 p, double tol = 0.0) const;
  // Point-in-rotated-rectangle test on the xy footprint.
  bool footprint_contains(double x, double y) const;
  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

struct RayHit {
  bool hit = false;
  double t = 0.0;  // meters along the normalized direction
  SemanticClass semantic = SemanticClass::none;
};

// Nearest intersection with t > 0. Throws std::invalid_argument on a zero direction.
RayHit ray_cast(Vec3 origin, Vec3 direction, std::span<const OrientedBox> boxes,
                bool with_ground = true);

// Direction (ego frame) of the ray through continuous pixel (u, v).
Vec3 pixel_ray(double u, double v, const CameraModel& cam);

}  // namespace occfeat::geom
