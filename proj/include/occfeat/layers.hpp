#pragma once

#include <memory>
#include <string>
#include <vector>

#include "occfeat/rng.hpp"
#include "occfeat/tensor.hpp"

namespace occfeat::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Shape dims) : name(std::move(n)), value(dims), grad(dims) {}

  void zero_grad() { grad.fill(0.0); }
};

// ---------------------------------------------------------------------------
// Functional kernels. Each forward has a matching backward; backwards return
// gradients rather than accumulating, the Layer wrappers do the accumulation.

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// input [C_in,H,W], weight [C_out,C_in,k,k] with k in {1,3}, bias [C_out].
// Padding is k/2, so stride 1 preserves H and W and stride 2 halves them
// (rounding up).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1);
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            int stride = 1);

// input [C_in,Z,H,W], weight [C_out,C_in], bias [C_out].
Tensor conv3d_1x1x1(const Tensor& input, const Tensor& weight, const Tensor& bias);
Conv2dGrads conv3d_1x1x1_backward(const Tensor& input, const Tensor& weight,
                                  const Tensor& grad_out);

inline constexpr double kInstanceNormEps = 1e-5;

// Per-channel spatial normalization of [C,H,W], no affine. Channels whose
// variance is at most eps are divided by sqrt(eps) instead of their own
// standard deviation, so a constant channel maps to zeros.
Tensor instance_norm2d(const Tensor& input, double eps = kInstanceNormEps);
Tensor instance_norm2d_backward(const Tensor& input, const Tensor& grad_out,
                                double eps = kInstanceNormEps);

double relu(double x);
double softplus(double x);
double sigmoid(double x);
double relu_grad(double x);
double softplus_grad(double x);
double sigmoid_grad(double x);

Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// [(N*Z),H,W] -> [N,Z,H,W]; contiguous block g of N channels becomes slice z=g.
Tensor reshape_to_volume(const Tensor& input, std::size_t z_groups);
// Exact inverse of reshape_to_volume.
Tensor volume_to_channels(const Tensor& volume);

// ---------------------------------------------------------------------------
// Layers.

// Values a layer keeps from forward for its backward pass.
struct LayerCache {
  Tensor input;
  Tensor output;
  Tensor aux;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, LayerCache& cache) const = 0;
  // Accumulates into parameter grads and returns d(loss)/d(input).
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache) = 0;

  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual void initialize(Rng&) {}
  virtual void set_name_prefix(const std::string&) {}
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t c_in, std::size_t c_out, int kernel, int stride = 1);

  std::string kind() const override;
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
  std::vector<Parameter*> parameters() override { return {&weight, &bias}; }
  void initialize(Rng& rng) override;
  void set_name_prefix(const std::string& prefix) override;

  Parameter weight;
  Parameter bias;

 private:
  int kernel_;
  int stride_;
};

class Conv3d1x1x1 final : public Layer {
 public:
  Conv3d1x1x1(std::size_t c_in, std::size_t c_out);

  std::string kind() const override { return "conv3d_1x1x1"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
  std::vector<Parameter*> parameters() override { return {&weight, &bias}; }
  void initialize(Rng& rng) override;
  void set_name_prefix(const std::string& prefix) override;

  Parameter weight;
  Parameter bias;
};

class InstanceNorm2d final : public Layer {
 public:
  explicit InstanceNorm2d(double eps = kInstanceNormEps) : eps_(eps) {}
  std::string kind() const override { return "instance_norm2d"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;

 private:
  double eps_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
};

class Softplus final : public Layer {
 public:
  std::string kind() const override { return "softplus"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;
};

class ReshapeToVolume final : public Layer {
 public:
  explicit ReshapeToVolume(std::size_t z_groups) : z_groups_(z_groups) {}
  std::string kind() const override { return "reshape_to_volume"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) override;

 private:
  std::size_t z_groups_;
};

}  // namespace occfeat::nn
