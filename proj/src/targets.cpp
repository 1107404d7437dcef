#include "occfeat/targets.hpp"

#include <stdexcept>

namespace occfeat::targets {

std::size_t OccupancyGrid::occupied_count() const {
  std::size_t n = 0;
  for (double v : data.values()) n += v != 0.0;
  return n;
}

std::size_t FeatureTargetVolume::valid_count() const {
  std::size_t n = 0;
  for (double v : valid_mask.values()) n += v != 0.0;
  return n;
}

OccupancyGrid voxelize(const Tensor& points, const GridSpec& grid) {
  grid.validate();
  if (points.ndim() != 2 || points.dim(1) != 3) {
    throw std::invalid_argument("voxelize: points must be [N,3], got " + shape_string(points.dims()));
  }
  OccupancyGrid occ{Tensor({grid.z_cells, grid.h_cells, grid.w_cells})};
  for (std::size_t n = 0; n < points.dim(0); ++n) {
    const geom::Vec3 p{points.at(n, 0), points.at(n, 1), points.at(n, 2)};
    if (auto v = grid.locate(p)) occ.data[grid.flat_index(*v)] = 1.0;
  }
  return occ;
}

FeatureTargetVolume build_feature_targets(const OccupancyGrid& occupancy, const GridSpec& grid,
                                          std::span<const geom::CameraModel> cameras,
                                          std::span<const Tensor> teacher_maps) {
  if (cameras.size() != teacher_maps.size()) {
    throw std::invalid_argument("build_feature_targets: " + std::to_string(teacher_maps.size()) +
                                " maps for " + std::to_string(cameras.size()) + " cameras");
  }
  if (occupancy.data.dims() != Shape{grid.z_cells, grid.h_cells, grid.w_cells}) {
    throw std::invalid_argument("build_feature_targets: occupancy does not match grid");
  }
  if (teacher_maps.empty()) throw std::invalid_argument("build_feature_targets: no cameras");
  const std::size_t dim = teacher_maps[0].dim(0);
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const auto& m = teacher_maps[c];
    if (m.ndim() != 3 || m.dim(0) != dim) {
      throw std::invalid_argument("build_feature_targets: teacher maps must share N_y channels");
    }
    if (m.dim(1) != cameras[c].feature_height || m.dim(2) != cameras[c].feature_width) {
      throw std::invalid_argument("build_feature_targets: map size differs from camera feature size");
    }
  }

  FeatureTargetVolume out{Tensor({dim, grid.z_cells, grid.h_cells, grid.w_cells}),
                          Tensor({grid.z_cells, grid.h_cells, grid.w_cells})};
  const std::size_t voxels = grid.voxel_count();
  std::vector<double> acc(dim);
  for (std::size_t k = 0; k < grid.z_cells; ++k) {
    for (std::size_t i = 0; i < grid.h_cells; ++i) {
      for (std::size_t j = 0; j < grid.w_cells; ++j) {
        const VoxelIndex v{k, i, j};
        const std::size_t flat = grid.flat_index(v);
        if (occupancy.data[flat] == 0.0) continue;
        const geom::Vec3 center = grid.voxel_center(v);
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t n = 0;
        for (std::size_t c = 0; c < cameras.size(); ++c) {
          const auto proj = geom::project(center, cameras[c]);
          if (!proj.valid) continue;
          const auto fc = geom::pixel_to_feature(proj.u, proj.v, cameras[c]);
          const auto s = geom::bilinear_sample(teacher_maps[c], fc.uf, fc.vf);
          if (!s.in_bounds) continue;
          // Running mean: identical samples average to themselves exactly.
          ++n;
          for (std::size_t ch = 0; ch < dim; ++ch) acc[ch] += (s.values[ch] - acc[ch]) / static_cast<double>(n);
        }
        if (n == 0) continue;
        out.valid_mask[flat] = 1.0;
        for (std::size_t ch = 0; ch < dim; ++ch) out.features[ch * voxels + flat] = acc[ch];
      }
    }
  }
  return out;
}

}  // namespace occfeat::targets
