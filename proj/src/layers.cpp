#include "occfeat/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace occfeat::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, pad, h_out, w_out;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride) {
  if (input.ndim() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
  if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be [C_out,C_in,k,k]");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  ConvGeometry g{};
  g.c_in = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  if (weight.dim(1) != g.c_in) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                " input channels, got " + std::to_string(g.c_in));
  }
  if (weight.dim(3) != g.k || (g.k != 1 && g.k != 3)) {
    throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
  }
  g.stride = static_cast<std::size_t>(stride);
  g.pad = g.k / 2;
  g.h_out = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1; }

RowMat im2col(const Tensor& input, const ConvGeometry& g) {
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(g.c_in * g.k * g.k),
                            static_cast<Eigen::Index>(g.h_out * g.w_out));
  const double* in = input.data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.h_out * g.w_out;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          double* dst = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  return col;
}

void col2im(const RowMat& col, const ConvGeometry& g, Tensor& grad_input) {
  double* out = grad_input.data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.h_out * g.w_out;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = out + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// out[C_out, P] = W[C_out, C_in] * in[C_in, P] + b
Tensor pointwise(const double* in, std::size_t c_in, std::size_t positions, const Tensor& weight,
                 const Tensor& bias, Shape out_dims) {
  const auto c_out = weight.dim(0);
  Tensor out(std::move(out_dims));
  MapConstMat x(in, static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(positions));
  MapConstMat w(weight.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in));
  MapMat y(out.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(positions));
  y.noalias() = w * x;
  for (std::size_t o = 0; o < c_out; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  return out;
}

void check_bias(const Tensor& bias, std::size_t c_out, const char* what) {
  if (bias.ndim() != 1 || bias.dim(0) != c_out) {
    throw std::invalid_argument(std::string(what) + ": bias must be [C_out]");
  }
}

double uniform_bound(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  const auto g = conv_geometry(input, weight, stride);
  check_bias(bias, g.c_out, "conv2d");
  const std::size_t rows = g.c_in * g.k * g.k;
  const Tensor flat_w = weight.reshaped({g.c_out, rows});
  if (is_pointwise(g)) {
    return pointwise(input.data(), g.c_in, g.h * g.w, flat_w, bias, {g.c_out, g.h, g.w});
  }
  const RowMat col = im2col(input, g);
  return pointwise(col.data(), rows, g.h_out * g.w_out, flat_w, bias, {g.c_out, g.h_out, g.w_out});
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            int stride) {
  const auto g = conv_geometry(input, weight, stride);
  if (grad_out.dims() != Shape{g.c_out, g.h_out, g.w_out}) {
    throw std::invalid_argument("conv2d_backward: grad_out dims " + shape_string(grad_out.dims()));
  }
  const auto rows = static_cast<Eigen::Index>(g.c_in * g.k * g.k);
  const auto cols = static_cast<Eigen::Index>(g.h_out * g.w_out);
  const auto c_out = static_cast<Eigen::Index>(g.c_out);

  Conv2dGrads grads{Tensor(input.dims()), Tensor(weight.dims()), Tensor({g.c_out})};
  MapConstMat go(grad_out.data(), c_out, cols);
  MapConstMat w(weight.data(), c_out, rows);
  MapMat gw(grads.weight.data(), c_out, rows);
  for (Eigen::Index o = 0; o < c_out; ++o) grads.bias[static_cast<std::size_t>(o)] = go.row(o).sum();

  if (is_pointwise(g)) {
    MapConstMat x(input.data(), rows, cols);
    gw.noalias() = go * x.transpose();
    MapMat gx(grads.input.data(), rows, cols);
    gx.noalias() = w.transpose() * go;
    return grads;
  }
  const RowMat col = im2col(input, g);
  gw.noalias() = go * col.transpose();
  RowMat gcol = w.transpose() * go;
  col2im(gcol, g, grads.input);
  return grads;
}

Tensor conv3d_1x1x1(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.ndim() != 4) throw std::invalid_argument("conv3d_1x1x1: input must be [C,Z,H,W]");
  if (weight.ndim() != 2) throw std::invalid_argument("conv3d_1x1x1: weight must be [C_out,C_in]");
  if (weight.dim(1) != input.dim(0)) {
    throw std::invalid_argument("conv3d_1x1x1: weight expects " + std::to_string(weight.dim(1)) +
                                " input channels, got " + std::to_string(input.dim(0)));
  }
  check_bias(bias, weight.dim(0), "conv3d_1x1x1");
  const std::size_t positions = input.size() / input.dim(0);
  return pointwise(input.data(), input.dim(0), positions, weight, bias,
                   {weight.dim(0), input.dim(1), input.dim(2), input.dim(3)});
}

Conv2dGrads conv3d_1x1x1_backward(const Tensor& input, const Tensor& weight,
                                  const Tensor& grad_out) {
  const auto c_in = static_cast<Eigen::Index>(input.dim(0));
  const auto c_out = static_cast<Eigen::Index>(weight.dim(0));
  const auto positions = static_cast<Eigen::Index>(input.size() / input.dim(0));
  if (grad_out.dims() != Shape{weight.dim(0), input.dim(1), input.dim(2), input.dim(3)}) {
    throw std::invalid_argument("conv3d_1x1x1_backward: grad_out dims " +
                                shape_string(grad_out.dims()));
  }
  Conv2dGrads grads{Tensor(input.dims()), Tensor(weight.dims()), Tensor({weight.dim(0)})};
  MapConstMat go(grad_out.data(), c_out, positions);
  MapConstMat x(input.data(), c_in, positions);
  MapConstMat w(weight.data(), c_out, c_in);
  MapMat(grads.weight.data(), c_out, c_in).noalias() = go * x.transpose();
  MapMat(grads.input.data(), c_in, positions).noalias() = w.transpose() * go;
  for (Eigen::Index o = 0; o < c_out; ++o) grads.bias[static_cast<std::size_t>(o)] = go.row(o).sum();
  return grads;
}

// ---------------------------------------------------------------------------

namespace {

struct ChannelStats {
  double mean;
  double inv_std;
  bool floored;
};

ChannelStats channel_stats(const double* x, std::size_t n, double eps) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n);
  const bool floored = var <= eps;
  return {mean, 1.0 / std::sqrt(floored ? eps : var), floored};
}

void check_norm_input(const Tensor& input) {
  if (input.ndim() != 3) throw std::invalid_argument("instance_norm2d: input must be [C,H,W]");
  if (input.dim(1) * input.dim(2) < 2) throw std::invalid_argument("instance_norm2d: need H*W >= 2");
}

}  // namespace

Tensor instance_norm2d(const Tensor& input, double eps) {
  check_norm_input(input);
  const std::size_t n = input.dim(1) * input.dim(2);
  Tensor out(input.dims());
  for (std::size_t c = 0; c < input.dim(0); ++c) {
    const double* x = input.data() + c * n;
    double* y = out.data() + c * n;
    const auto s = channel_stats(x, n, eps);
    for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - s.mean) * s.inv_std;
  }
  return out;
}

Tensor instance_norm2d_backward(const Tensor& input, const Tensor& grad_out, double eps) {
  check_norm_input(input);
  require_same_dims(input, grad_out, "instance_norm2d_backward");
  const std::size_t n = input.dim(1) * input.dim(2);
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor grad_in(input.dims());
  for (std::size_t c = 0; c < input.dim(0); ++c) {
    const double* x = input.data() + c * n;
    const double* gy = grad_out.data() + c * n;
    double* gx = grad_in.data() + c * n;
    const auto s = channel_stats(x, n, eps);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += gy[i];
      sum_gx += gy[i] * (x[i] - s.mean) * s.inv_std;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double xhat = (x[i] - s.mean) * s.inv_std;
      // In the floored branch the denominator is constant.
      const double var_term = s.floored ? 0.0 : xhat * sum_gx * inv_n;
      gx[i] = s.inv_std * (gy[i] - sum_g * inv_n - var_term);
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------

double relu(double x) { return x > 0.0 ? x : 0.0; }
double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_grad(double x) { return sigmoid(x); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double sigmoid_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

namespace {
template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}
template <typename F>
Tensor chain(const Tensor& x, const Tensor& g, F df) {
  require_same_dims(x, g, "activation backward");
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = g[i] * df(x[i]);
  return out;
}
}  // namespace

Tensor relu(const Tensor& x) { return map(x, [](double v) { return relu(v); }); }
Tensor softplus(const Tensor& x) { return map(x, [](double v) { return softplus(v); }); }
Tensor sigmoid(const Tensor& x) { return map(x, [](double v) { return sigmoid(v); }); }

// Input channel idx = z * N + c lands at volume(c, z).
Tensor reshape_to_volume(const Tensor& input, std::size_t z_groups) {
  if (input.ndim() != 3) throw std::invalid_argument("reshape_to_volume: input must be [C,H,W]");
  if (z_groups == 0 || input.dim(0) % z_groups != 0) {
    throw std::invalid_argument("reshape_to_volume: " + std::to_string(input.dim(0)) +
                                " channels not divisible into " + std::to_string(z_groups) +
                                " groups");
  }
  const std::size_t n = input.dim(0) / z_groups;
  const std::size_t hw = input.dim(1) * input.dim(2);
  Tensor out({n, z_groups, input.dim(1), input.dim(2)});
  for (std::size_t z = 0; z < z_groups; ++z) {
    for (std::size_t c = 0; c < n; ++c) {
      const double* src = input.data() + (z * n + c) * hw;
      double* dst = out.data() + (c * z_groups + z) * hw;
      std::copy(src, src + hw, dst);
    }
  }
  return out;
}

Tensor volume_to_channels(const Tensor& volume) {
  if (volume.ndim() != 4) throw std::invalid_argument("volume_to_channels: input must be [N,Z,H,W]");
  const std::size_t n = volume.dim(0);
  const std::size_t zg = volume.dim(1);
  const std::size_t hw = volume.dim(2) * volume.dim(3);
  Tensor out({n * zg, volume.dim(2), volume.dim(3)});
  for (std::size_t z = 0; z < zg; ++z) {
    for (std::size_t c = 0; c < n; ++c) {
      const double* src = volume.data() + (c * zg + z) * hw;
      std::copy(src, src + hw, out.data() + (z * n + c) * hw);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::size_t c_in, std::size_t c_out, int kernel, int stride)
    : weight("weight", {c_out, c_in, static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)}),
      bias("bias", {c_out}),
      kernel_(kernel),
      stride_(stride) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw std::invalid_argument("Conv2d: stride must be 1 or 2");
}

std::string Conv2d::kind() const {
  return "conv2d_" + std::to_string(kernel_) + "x" + std::to_string(kernel_) +
         (stride_ == 2 ? "_s2" : "");
}

Tensor Conv2d::forward(const Tensor& x, LayerCache& cache) const {
  cache.input = x;
  return conv2d(x, weight.value, bias.value, stride_);
}

Tensor Conv2d::backward(const Tensor& grad_out, const LayerCache& cache) {
  auto g = conv2d_backward(cache.input, weight.value, grad_out, stride_);
  weight.grad += g.weight;
  bias.grad += g.bias;
  return std::move(g.input);
}

void Conv2d::initialize(Rng& rng) {
  const double b = uniform_bound(weight.value.dim(1) * weight.value.dim(2) * weight.value.dim(3));
  init_uniform(weight.value, b, rng);
  init_uniform(bias.value, b, rng);
}

void Conv2d::set_name_prefix(const std::string& prefix) {
  weight.name = prefix + ".weight";
  bias.name = prefix + ".bias";
}

Conv3d1x1x1::Conv3d1x1x1(std::size_t c_in, std::size_t c_out)
    : weight("weight", {c_out, c_in}), bias("bias", {c_out}) {}

Tensor Conv3d1x1x1::forward(const Tensor& x, LayerCache& cache) const {
  cache.input = x;
  return conv3d_1x1x1(x, weight.value, bias.value);
}

Tensor Conv3d1x1x1::backward(const Tensor& grad_out, const LayerCache& cache) {
  auto g = conv3d_1x1x1_backward(cache.input, weight.value, grad_out);
  weight.grad += g.weight;
  bias.grad += g.bias;
  return std::move(g.input);
}

void Conv3d1x1x1::initialize(Rng& rng) {
  const double b = uniform_bound(weight.value.dim(1));
  init_uniform(weight.value, b, rng);
  init_uniform(bias.value, b, rng);
}

void Conv3d1x1x1::set_name_prefix(const std::string& prefix) {
  weight.name = prefix + ".weight";
  bias.name = prefix + ".bias";
}

Tensor InstanceNorm2d::forward(const Tensor& x, LayerCache& cache) const {
  cache.input = x;
  return instance_norm2d(x, eps_);
}

Tensor InstanceNorm2d::backward(const Tensor& grad_out, const LayerCache& cache) {
  return instance_norm2d_backward(cache.input, grad_out, eps_);
}

Tensor ReLU::forward(const Tensor& x, LayerCache& cache) const {
  cache.input = x;
  return relu(x);
}

Tensor ReLU::backward(const Tensor& grad_out, const LayerCache& cache) {
  return chain(cache.input, grad_out, [](double v) { return relu_grad(v); });
}

Tensor Softplus::forward(const Tensor& x, LayerCache& cache) const {
  cache.input = x;
  return softplus(x);
}

Tensor Softplus::backward(const Tensor& grad_out, const LayerCache& cache) {
  return chain(cache.input, grad_out, [](double v) { return softplus_grad(v); });
}

Tensor Sigmoid::forward(const Tensor& x, LayerCache& cache) const {
  cache.output = sigmoid(x);
  return cache.output;
}

Tensor Sigmoid::backward(const Tensor& grad_out, const LayerCache& cache) {
  require_same_dims(cache.output, grad_out, "Sigmoid::backward");
  Tensor g(grad_out.dims());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = cache.output[i];
    g[i] = grad_out[i] * s * (1.0 - s);
  }
  return g;
}

Tensor ReshapeToVolume::forward(const Tensor& x, LayerCache&) const {
  return reshape_to_volume(x, z_groups_);
}

Tensor ReshapeToVolume::backward(const Tensor& grad_out, const LayerCache&) {
  return volume_to_channels(grad_out);
}

}  // namespace occfeat::nn
