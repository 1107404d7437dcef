#pragma once

#include <span>
#include <vector>

#include "occfeat/geometry.hpp"
#include "occfeat/grid.hpp"
#include "occfeat/tensor.hpp"

namespace occfeat::targets {

// Binary occupancy O over the grid, [Z_B, H_B, W_B].
struct OccupancyGrid {
  Tensor data;
  std::size_t occupied_count() const;
};

// Per-voxel teacher features Y [N_y, Z_B, H_B, W_B] and the mask of occupied
// voxels that received at least one valid sample [Z_B, H_B, W_B]. Features
// are zero wherever the mask is zero.
struct FeatureTargetVolume {
  Tensor features;
  Tensor valid_mask;
  std::size_t valid_count() const;
};

// A voxel is occupied iff at least one point falls in its half-open cell.
// Points outside the grid are ignored. points: [N, 3].
OccupancyGrid voxelize(const Tensor& points, const GridSpec& grid);

// For each occupied voxel, projects its center into every camera, samples the
// camera's teacher map bilinearly at the matching feature-map coordinate and
// averages over cameras with a valid, in-bounds sample. No visibility test.
// Throws std::invalid_argument when map and camera counts or channels differ.
FeatureTargetVolume build_feature_targets(const OccupancyGrid& occupancy, const GridSpec& grid,
                                          std::span<const geom::CameraModel> cameras,
                                          std::span<const Tensor> teacher_maps);

}  // namespace occfeat::targets
