#include "occfeat/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace occfeat {
namespace {

double edge(const AxisRange& r, std::size_t n, std::size_t k) {
  return k == n ? r.max : r.min + static_cast<double>(k) * (r.extent() / static_cast<double>(n));
}

// Cell k with edge(k) <= p < edge(k + 1), or -1.
std::ptrdiff_t locate_axis(double p, const AxisRange& r, std::size_t n) {
  if (!(p >= r.min) || !(p < r.max)) return -1;
  auto k = static_cast<std::ptrdiff_t>(std::floor((p - r.min) / (r.extent() / static_cast<double>(n))));
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  k = std::clamp<std::ptrdiff_t>(k, 0, last);
  while (k > 0 && p < edge(r, n, static_cast<std::size_t>(k))) --k;
  while (k < last && p >= edge(r, n, static_cast<std::size_t>(k) + 1)) ++k;
  return k;
}

double center(const AxisRange& r, std::size_t n, std::size_t k) {
  return r.min + (static_cast<double>(k) + 0.5) * (r.extent() / static_cast<double>(n));
}

}  // namespace

GridSpec GridSpec::desk() { return GridSpec{}; }

GridSpec GridSpec::nuscenes() {
  GridSpec g;
  g.x_range = {-50.0, 50.0};
  g.y_range = {-50.0, 50.0};
  g.z_range = {-1.0, 5.0};
  g.z_cells = 8;
  g.h_cells = 200;
  g.w_cells = 200;
  return g;
}

void GridSpec::validate() const {
  for (const auto* r : {&x_range, &y_range, &z_range}) {
    if (!(r->max > r->min)) throw std::invalid_argument("GridSpec: range max must exceed min");
  }
  if (z_cells == 0 || h_cells == 0 || w_cells == 0) {
    throw std::invalid_argument("GridSpec: resolutions must be positive");
  }
}

geom::Vec3 GridSpec::voxel_center(const VoxelIndex& v) const {
  if (v.k >= z_cells || v.i >= h_cells || v.j >= w_cells) {
    throw std::out_of_range("voxel_center: index (" + std::to_string(v.k) + "," +
                            std::to_string(v.i) + "," + std::to_string(v.j) + ") outside grid");
  }
  return {center(x_range, h_cells, v.i), center(y_range, w_cells, v.j),
          center(z_range, z_cells, v.k)};
}

geom::Vec3 GridSpec::bev_center(std::size_t i, std::size_t j, double z) const {
  return {center(x_range, h_cells, i), center(y_range, w_cells, j), z};
}

std::optional<VoxelIndex> GridSpec::locate(const geom::Vec3& p) const {
  const auto i = locate_axis(p.x, x_range, h_cells);
  const auto j = locate_axis(p.y, y_range, w_cells);
  const auto k = locate_axis(p.z, z_range, z_cells);
  if (i < 0 || j < 0 || k < 0) return std::nullopt;
  return VoxelIndex{static_cast<std::size_t>(k), static_cast<std::size_t>(i),
                    static_cast<std::size_t>(j)};
}

GridSpec GridSpec::with_z_cells(std::size_t z) const {
  GridSpec g = *this;
  g.z_cells = z;
  return g;
}

std::string format_grid(const GridSpec& g) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %zu %zu %zu\n",
                g.x_range.min, g.x_range.max, g.y_range.min, g.y_range.max, g.z_range.min,
                g.z_range.max, g.z_cells, g.h_cells, g.w_cells);
  return buf;
}

GridSpec parse_grid(const std::string& text) {
  std::istringstream in(text);
  GridSpec g;
  if (!(in >> g.x_range.min >> g.x_range.max >> g.y_range.min >> g.y_range.max >> g.z_range.min >>
        g.z_range.max >> g.z_cells >> g.h_cells >> g.w_cells)) {
    throw std::invalid_argument("parse_grid: expected 6 bounds and 3 cell counts");
  }
  g.validate();
  return g;
}

}  // namespace occfeat
