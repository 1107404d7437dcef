#include "occfeat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace occfeat::loss {

LossGrad occupancy_loss(const Tensor& predicted, const Tensor& target) {
  require_same_dims(predicted, target, "occupancy_loss");
  const double inv_n = 1.0 / static_cast<double>(predicted.size());
  LossGrad out{0.0, Tensor(predicted.dims()), 0};
  double sum = 0.0;
  for (std::size_t v = 0; v < predicted.size(); ++v) {
    const double raw = predicted[v];
    const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
    const double o = target[v];
    out.count += o != 0.0;
    sum -= o * std::log(p) + (1.0 - o) * std::log(1.0 - p);
    if (raw > kBceClamp && raw < 1.0 - kBceClamp) {
      out.grad[v] = inv_n * (-o / p + (1.0 - o) / (1.0 - p));
    }
  }
  out.value = sum * inv_n;
  return out;
}

LossGrad distillation_loss(const Tensor& predicted, const Tensor& target, const Tensor& valid_mask) {
  require_same_dims(predicted, target, "distillation_loss");
  if (predicted.ndim() != 4) throw std::invalid_argument("distillation_loss: expected [N_y,Z,H,W]");
  if (valid_mask.dims() != Shape(predicted.dims().begin() + 1, predicted.dims().end())) {
    throw std::invalid_argument("distillation_loss: mask dims " + shape_string(valid_mask.dims()));
  }
  const std::size_t dim = predicted.dim(0);
  const std::size_t voxels = valid_mask.size();
  LossGrad out{0.0, Tensor(predicted.dims()), 0};
  for (std::size_t v = 0; v < voxels; ++v) out.count += valid_mask[v] != 0.0;
  if (out.count == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(out.count);
  double sum = 0.0;
  for (std::size_t v = 0; v < voxels; ++v) {
    if (valid_mask[v] == 0.0) continue;
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double a = predicted[c * voxels + v];
      const double b = target[c * voxels + v];
      ab += a * b;
      aa += a * a;
      bb += b * b;
    }
    const double na_raw = std::sqrt(aa);
    const double na = std::max(na_raw, kCosineEps);
    const double nb = std::max(std::sqrt(bb), kCosineEps);
    const double cos = ab / (na * nb);
    sum += cos;
    // d(-cos/n)/da
    const bool a_floored = na_raw <= kCosineEps;
    for (std::size_t c = 0; c < dim; ++c) {
      const double a = predicted[c * voxels + v];
      const double b = target[c * voxels + v];
      const double dcos = b / (na * nb) - (a_floored ? 0.0 : cos * a / (na * na));
      out.grad[c * voxels + v] = -inv_n * dcos;
    }
  }
  out.value = -sum * inv_n;
  return out;
}

LossBreakdown total_loss(double l_occ, double l_feat, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  LossBreakdown b;
  b.l_occ = l_occ;
  b.l_feat = l_feat;
  b.lambda = lambda;
  b.total = l_occ + lambda * l_feat;
  return b;
}

}  // namespace occfeat::loss
