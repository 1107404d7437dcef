#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "occfeat/grid.hpp"
#include "occfeat/tensor.hpp"

namespace occfeat::viz {

struct PcaBasis {
  std::vector<double> mean;                          // N_y
  std::array<std::vector<double>, 3> components;     // orthonormal
  std::array<double, 3> eigenvalues{};               // non-increasing
  std::array<std::array<double, 2>, 3> range{};      // (min, max) projection per component
};

// Top-3 covariance eigenpairs of the rows of features [M, N_y] by power
// iteration with deflation. Each component's largest-magnitude coordinate is
// positive. Throws std::invalid_argument for M < 4 or rank-0 data.
PcaBasis fit_pca(const Tensor& features);

std::array<double, 3> pca_project(const PcaBasis& basis, std::span<const double> feature);

// Feature rows [M, N_y] of the voxels where mask != 0, in flat voxel order.
Tensor masked_features(const Tensor& volume, const Tensor& mask);

// For every BEV cell, the flat voxel index of the highest voxel with mask != 0.
std::vector<std::ptrdiff_t> top_voxels(const Tensor& mask);

// Image layout: pixel row r shows BEV row H_B-1-r and pixel column q shows BEV
// column W_B-1-q, so ego forward is up and ego left is left.
std::array<std::size_t, 2> bev_to_pixel(std::size_t i, std::size_t j, std::size_t h, std::size_t w);

// volume [N_y,Z,H,W], mask [Z,H,W] -> RGB [3,H,W] in [0,1]; cells without a
// masked voxel are black.
Tensor render_pca_topview(const Tensor& volume, const Tensor& mask, const PcaBasis& basis);

// Max over masked voxels of each column of cos(volume[:,v], volume[:,query]);
// NaN for columns without a masked voxel. Throws std::out_of_range for a query
// outside the grid and std::invalid_argument for a zero query feature.
Tensor correlation_map(const Tensor& volume, const VoxelIndex& query, const Tensor& mask);

// Blue (-1) through white (0) to red (+1).
std::array<double, 3> diverging_color(double value);

// [3,H,W]; NaN cells are black.
Tensor render_correlation(const Tensor& volume, const VoxelIndex& query, const Tensor& mask);

// Binary PPM: "P6\n<W> <H>\n255\n" then row-major RGB bytes. Values are
// clamped to [0,1] and quantized with round(v * 255).
std::vector<std::uint8_t> encode_ppm(const Tensor& pixels);
// Throws std::runtime_error when the path cannot be written.
void write_image(const Tensor& pixels, const std::filesystem::path& path);

}  // namespace occfeat::viz
