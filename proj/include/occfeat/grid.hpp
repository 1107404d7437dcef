#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "occfeat/geometry.hpp"

namespace occfeat {

// Half-open metric interval [min, max).
struct AxisRange {
  double min = 0.0;
  double max = 1.0;
  double extent() const { return max - min; }
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

struct VoxelIndex {
  std::size_t k = 0;  // height (z)
  std::size_t i = 0;  // BEV row (x)
  std::size_t j = 0;  // BEV column (y)
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

// Voxel grid of Z_B x H_B x W_B cells. BEV rows run along ego x, columns
// along ego y, slices along z.
struct GridSpec {
  AxisRange x_range{-8.0, 8.0};
  AxisRange y_range{-8.0, 8.0};
  AxisRange z_range{0.0, 4.0};
  std::size_t z_cells = 8;  // Z_B
  std::size_t h_cells = 16; // H_B
  std::size_t w_cells = 16; // W_B

  // 16x16x8 over +-8 m, z in [0, 4).
  static GridSpec desk();
  // 200x200 over +-50 m, z in [-1, 5) with 8 slices.
  static GridSpec nuscenes();

  void validate() const;

  double voxel_size_x() const { return x_range.extent() / static_cast<double>(h_cells); }
  double voxel_size_y() const { return y_range.extent() / static_cast<double>(w_cells); }
  double voxel_size_z() const { return z_range.extent() / static_cast<double>(z_cells); }
  std::size_t voxel_count() const { return z_cells * h_cells * w_cells; }
  std::size_t bev_count() const { return h_cells * w_cells; }
  std::size_t flat_index(const VoxelIndex& v) const { return (v.k * h_cells + v.i) * w_cells + v.j; }

  // Throws std::out_of_range for an index outside the grid.
  geom::Vec3 voxel_center(const VoxelIndex& v) const;
  // Center of BEV cell (i, j) at height z.
  geom::Vec3 bev_center(std::size_t i, std::size_t j, double z = 0.0) const;
  // floor((p - min) / size) per axis; nullopt outside the half-open ranges.
  std::optional<VoxelIndex> locate(const geom::Vec3& p) const;

  // Same footprint with a different number of height cells.
  GridSpec with_z_cells(std::size_t z) const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

std::string format_grid(const GridSpec& grid);
// Throws std::invalid_argument on malformed text.
GridSpec parse_grid(const std::string& text);

}  // namespace occfeat
