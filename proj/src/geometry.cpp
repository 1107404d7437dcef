#include "occfeat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace occfeat::geom {

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

Vec3 Mat3::operator*(Vec3 v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    }
  }
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
  }
  return r;
}

double Mat3::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation.transposed();
  const Vec3 t = rt * translation;
  return {rt, {-t.x, -t.y, -t.z}};
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

bool RigidTransform::is_valid(double tol) const {
  const Mat3 rtr = rotation.transposed() * rotation;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  }
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Vec3 CameraModel::center() const { return ego_to_camera.inverse().translation; }

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("CameraModel: fx, fy must be positive");
  if (image_width == 0 || image_height == 0 || feature_width == 0 || feature_height == 0) {
    throw std::invalid_argument("CameraModel: zero image or feature size");
  }
  if (feature_width > image_width || feature_height > image_height) {
    throw std::invalid_argument("CameraModel: feature map larger than image");
  }
  if (!ego_to_camera.is_valid(1e-9)) throw std::invalid_argument("CameraModel: extrinsic is not rigid");
}

RigidTransform look_transform(Vec3 position, double yaw, double pitch) {
  const Vec3 forward{std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                     -std::sin(pitch)};
  const Vec3 right{std::sin(yaw), -std::cos(yaw), 0.0};
  const Vec3 down = cross(forward, right);
  Mat3 r;
  for (std::size_t j = 0; j < 3; ++j) {
    r(0, j) = right[j];
    r(1, j) = down[j];
    r(2, j) = forward[j];
  }
  const Vec3 t = r * position;
  return {r, {-t.x, -t.y, -t.z}};
}

CameraModel make_camera(std::size_t image_width, std::size_t image_height,
                        std::size_t feature_width, std::size_t feature_height, double hfov,
                        const RigidTransform& ego_to_camera) {
  CameraModel cam;
  cam.image_width = image_width;
  cam.image_height = image_height;
  cam.feature_width = feature_width;
  cam.feature_height = feature_height;
  cam.fx = 0.5 * static_cast<double>(image_width) / std::tan(0.5 * hfov);
  cam.fy = cam.fx;
  cam.cx = 0.5 * static_cast<double>(image_width) - 0.5;
  cam.cy = 0.5 * static_cast<double>(image_height) - 0.5;
  cam.ego_to_camera = ego_to_camera;
  cam.validate();
  return cam;
}

Projection project(Vec3 point, const CameraModel& cam) {
  const Vec3 pc = cam.ego_to_camera.apply(point);
  Projection p;
  p.depth = pc.z;
  if (!(pc.z > kDepthEps)) return p;
  p.u = cam.fx * pc.x / pc.z + cam.cx;
  p.v = cam.fy * pc.y / pc.z + cam.cy;
  p.valid = p.u >= 0.0 && p.u < static_cast<double>(cam.image_width) && p.v >= 0.0 &&
            p.v < static_cast<double>(cam.image_height);
  return p;
}

FeatureCoord pixel_to_feature(double u, double v, const CameraModel& cam) {
  const double sx = static_cast<double>(cam.feature_width) / static_cast<double>(cam.image_width);
  const double sy = static_cast<double>(cam.feature_height) / static_cast<double>(cam.image_height);
  return {(u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5};
}

std::array<double, 2> feature_to_pixel(double uf, double vf, const CameraModel& cam) {
  const double sx = static_cast<double>(cam.image_width) / static_cast<double>(cam.feature_width);
  const double sy = static_cast<double>(cam.image_height) / static_cast<double>(cam.feature_height);
  return {(uf + 0.5) * sx - 0.5, (vf + 0.5) * sy - 0.5};
}

namespace {

// Lower neighbour index and fractional weight along one axis; false when the
// coordinate is outside [0, n-1]. At exactly n-1 the pair (n-2, n-1) is used
// with weight 1 on the upper cell so that all neighbours stay inside.
bool axis_taps(double coord, std::size_t n, std::size_t& lo, std::size_t& hi, double& frac) {
  if (!(coord >= 0.0) || !(coord <= static_cast<double>(n - 1))) return false;
  if (n == 1) {
    lo = hi = 0;
    frac = 0.0;
    return true;
  }
  lo = std::min(static_cast<std::size_t>(coord), n - 2);
  hi = lo + 1;
  frac = coord - static_cast<double>(lo);
  return true;
}

}  // namespace

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double uf, double vf) {
  BilinearTaps taps;
  if (height == 0 || width == 0) return taps;
  std::size_t x0, x1, y0, y1;
  double dx, dy;
  if (!axis_taps(uf, width, x0, x1, dx) || !axis_taps(vf, height, y0, y1, dy)) return taps;
  taps.offsets = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  taps.weights = {(1.0 - dx) * (1.0 - dy), dx * (1.0 - dy), (1.0 - dx) * dy, dx * dy};
  taps.du = dx;
  taps.dv = dy;
  taps.in_bounds = true;
  return taps;
}

BilinearSample bilinear_sample(const Tensor& map, double uf, double vf) {
  if (map.ndim() != 3) throw std::invalid_argument("bilinear_sample: map must be [C,H,W]");
  const std::size_t c = map.dim(0);
  const std::size_t hw = map.dim(1) * map.dim(2);
  BilinearSample s{std::vector<double>(c, 0.0), false};
  const auto taps = bilinear_taps(map.dim(1), map.dim(2), uf, vf);
  if (!taps.in_bounds) return s;
  s.in_bounds = true;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = map.data() + ch * hw;
    const auto& o = taps.offsets;
    const double top = std::lerp(plane[o[0]], plane[o[1]], taps.du);
    const double bottom = std::lerp(plane[o[2]], plane[o[3]], taps.du);
    s.values[ch] = std::lerp(top, bottom, taps.dv);
  }
  return s;
}

void bilinear_sample_backward(std::span<const double> grad, double uf, double vf, Tensor& grad_map) {
  if (grad_map.ndim() != 3 || grad.size() != grad_map.dim(0)) {
    throw std::invalid_argument("bilinear_sample_backward: channel mismatch");
  }
  const auto taps = bilinear_taps(grad_map.dim(1), grad_map.dim(2), uf, vf);
  if (!taps.in_bounds) return;
  const std::size_t hw = grad_map.dim(1) * grad_map.dim(2);
  for (std::size_t ch = 0; ch < grad.size(); ++ch) {
    double* plane = grad_map.data() + ch * hw;
    for (std::size_t k = 0; k < 4; ++k) plane[taps.offsets[k]] += taps.weights[k] * grad[ch];
  }
}

// ---------------------------------------------------------------------------

Vec3 OrientedBox::to_local(Vec3 p) const {
  const Vec3 d = p - center;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

bool OrientedBox::contains(Vec3 p, double tol) const {
  const Vec3 l = to_local(p);
  return std::abs(l.x) <= half_extents.x + tol && std::abs(l.y) <= half_extents.y + tol &&
         std::abs(l.z) <= half_extents.z + tol;
}

bool OrientedBox::footprint_contains(double x, double y) const {
  const Vec3 l = to_local({x, y, center.z});
  return std::abs(l.x) <= half_extents.x && std::abs(l.y) <= half_extents.y;
}

namespace {

constexpr double kHitEps = 1e-9;

// Slab test in the box frame; returns +inf on a miss.
double intersect_box(Vec3 origin, Vec3 dir, const OrientedBox& box) {
  const Vec3 o = box.to_local(origin);
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const Vec3 d{c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    const double h = box.half_extents[a];
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > h) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t1 = (-h - o[a]) / d[a];
    double t2 = (h - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far) return std::numeric_limits<double>::infinity();
  if (t_near > kHitEps) return t_near;
  if (t_far > kHitEps) return t_far;
  return std::numeric_limits<double>::infinity();
}

}  // namespace

RayHit ray_cast(Vec3 origin, Vec3 direction, std::span<const OrientedBox> boxes, bool with_ground) {
  const double len = norm(direction);
  if (!(len > 0.0)) throw std::invalid_argument("ray_cast: zero direction");
  const Vec3 dir = (1.0 / len) * direction;
  RayHit best;
  double best_t = std::numeric_limits<double>::infinity();
  if (with_ground && dir.z < 0.0 && origin.z > 0.0) {
    best_t = -origin.z / dir.z;
    best.semantic = SemanticClass::ground;
  }
  for (const auto& box : boxes) {
    const double t = intersect_box(origin, dir, box);
    if (t < best_t) {
      best_t = t;
      best.semantic = box.semantic;
    }
  }
  if (std::isfinite(best_t)) {
    best.hit = true;
    best.t = best_t;
  } else {
    best.semantic = SemanticClass::none;
  }
  return best;
}

Vec3 pixel_ray(double u, double v, const CameraModel& cam) {
  const Vec3 d_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  return cam.ego_to_camera.rotation.transposed() * d_cam;
}

}  // namespace occfeat::geom
