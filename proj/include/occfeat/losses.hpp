#pragma once

#include <cstddef>

#include "occfeat/tensor.hpp"

namespace occfeat::loss {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kCosineEps = 1e-8;
inline constexpr double kDefaultLambda = 0.01;

struct LossGrad {
  double value = 0.0;
  Tensor grad;  // d(value)/d(prediction)
  std::size_t count = 0;
};

// Mean binary cross-entropy over all voxels. Predictions are clamped to
// [1e-7, 1 - 1e-7] before the logs; the gradient is zero where the clamp is
// active. `count` is the number of occupied target voxels.
LossGrad occupancy_loss(const Tensor& predicted, const Tensor& target);

// Negative cosine similarity averaged over voxels with valid_mask = 1.
// predicted/target: [N_y, Z, H, W]; valid_mask: [Z, H, W]. Norms are floored
// at 1e-8. With no valid voxel the loss and gradient are zero. `count` is the
// number of valid voxels.
LossGrad distillation_loss(const Tensor& predicted, const Tensor& target, const Tensor& valid_mask);

struct LossBreakdown {
  double l_occ = 0.0;
  double l_feat = 0.0;
  double lambda = kDefaultLambda;
  double total = 0.0;
  std::size_t n_voxels = 0;
  std::size_t n_occupied = 0;
  std::size_t n_valid = 0;
};

// total = l_occ + lambda * l_feat. Throws std::invalid_argument for lambda < 0.
LossBreakdown total_loss(double l_occ, double l_feat, double lambda);

}  // namespace occfeat::loss
