#include "occfeat/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace occfeat::viz {

namespace {

using Vec = std::vector<double>;

double dotv(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Vec& v) {
  const double n = std::sqrt(dotv(v, v));
  for (double& x : v) x /= n;
}

Vec matvec(const std::vector<Vec>& m, const Vec& v) {
  Vec out(v.size(), 0.0);
  for (std::size_t r = 0; r < m.size(); ++r) out[r] = dotv(m[r], v);
  return out;
}

void orthogonalize(Vec& v, const std::vector<Vec>& against) {
  for (const auto& u : against) {
    const double d = dotv(v, u);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * u[i];
  }
}

void fix_sign(Vec& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v[best] < 0.0) {
    for (double& x : v) x = -x;
  }
}

}  // namespace

PcaBasis fit_pca(const Tensor& features) {
  if (features.ndim() != 2) throw std::invalid_argument("fit_pca: expected [M, N_y]");
  const std::size_t m = features.dim(0), d = features.dim(1);
  if (m < 4) throw std::invalid_argument("fit_pca: need at least 4 rows");
  if (d < 3) throw std::invalid_argument("fit_pca: need at least 3 feature dimensions");

  PcaBasis basis;
  basis.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d; ++c) basis.mean[c] += features[r * d + c];
  }
  for (double& x : basis.mean) x /= static_cast<double>(m);

  std::vector<Vec> cov(d, Vec(d, 0.0));
  Vec row(d);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d; ++c) row[c] = features[r * d + c] - basis.mean[c];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += row[a] * row[b];
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) cov[a][b] /= static_cast<double>(m);
    trace += cov[a][a];
  }
  if (!(trace > 0.0)) throw std::invalid_argument("fit_pca: data has rank 0");

  std::vector<Vec> found;
  for (std::size_t k = 0; k < 3; ++k) {
    // Fixed, generic start vector.
    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.1 * std::sin(1.7 * static_cast<double>(i + 3 * k) + 0.3);
    orthogonalize(v, found);
    normalize(v);
    double lambda = dotv(v, matvec(cov, v));
    if (lambda > 1e-14 * trace) {
      for (int it = 0; it < 200000; ++it) {
        Vec w = matvec(cov, v);
        orthogonalize(w, found);
        const double n = std::sqrt(dotv(w, w));
        if (n <= 1e-300) break;
        for (double& x : w) x /= n;
        double delta = 0.0;
        for (std::size_t i = 0; i < d; ++i) delta = std::max(delta, std::abs(w[i] - v[i]));
        v = std::move(w);
        if (delta < 1e-14) break;
      }
      lambda = dotv(v, matvec(cov, v));
    }
    // Deflation: remove the found direction from the operator.
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] -= lambda * v[a] * v[b];
    }
    fix_sign(v);
    basis.components[k] = v;
    basis.eigenvalues[k] = std::max(lambda, 0.0);
    found.push_back(std::move(v));
  }

  for (std::size_t k = 0; k < 3; ++k) {
    basis.range[k] = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  }
  for (std::size_t r = 0; r < m; ++r) {
    const auto p = pca_project(basis, features.values().subspan(r * d, d));
    for (std::size_t k = 0; k < 3; ++k) {
      basis.range[k][0] = std::min(basis.range[k][0], p[k]);
      basis.range[k][1] = std::max(basis.range[k][1], p[k]);
    }
  }
  return basis;
}

std::array<double, 3> pca_project(const PcaBasis& basis, std::span<const double> feature) {
  if (feature.size() != basis.mean.size()) throw std::invalid_argument("pca_project: dimension mismatch");
  std::array<double, 3> out{};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < feature.size(); ++i) {
      out[k] += (feature[i] - basis.mean[i]) * basis.components[k][i];
    }
  }
  return out;
}

namespace {

void check_volume(const Tensor& volume, const Tensor& mask, const char* what) {
  if (volume.ndim() != 4 || mask.dims() != Shape(volume.dims().begin() + 1, volume.dims().end())) {
    throw std::invalid_argument(std::string(what) + ": volume " + shape_string(volume.dims()) +
                                " and mask " + shape_string(mask.dims()) + " disagree");
  }
}

std::vector<double> voxel_feature(const Tensor& volume, std::size_t v) {
  const std::size_t c = volume.dim(0);
  const std::size_t n = volume.size() / c;
  std::vector<double> f(c);
  for (std::size_t k = 0; k < c; ++k) f[k] = volume[k * n + v];
  return f;
}

}  // namespace

Tensor masked_features(const Tensor& volume, const Tensor& mask) {
  check_volume(volume, mask, "masked_features");
  const std::size_t c = volume.dim(0);
  std::vector<double> rows;
  std::size_t m = 0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (mask[v] == 0.0) continue;
    const auto f = voxel_feature(volume, v);
    rows.insert(rows.end(), f.begin(), f.end());
    ++m;
  }
  if (m == 0) return Tensor();
  return Tensor({m, c}, std::move(rows));
}

std::vector<std::ptrdiff_t> top_voxels(const Tensor& mask) {
  if (mask.ndim() != 3) throw std::invalid_argument("top_voxels: expected [Z,H,W]");
  const std::size_t z = mask.dim(0), plane = mask.dim(1) * mask.dim(2);
  std::vector<std::ptrdiff_t> out(plane, -1);
  for (std::size_t cell = 0; cell < plane; ++cell) {
    for (std::size_t k = z; k-- > 0;) {
      if (mask[k * plane + cell] != 0.0) {
        out[cell] = static_cast<std::ptrdiff_t>(k * plane + cell);
        break;
      }
    }
  }
  return out;
}

std::array<std::size_t, 2> bev_to_pixel(std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  return {h - 1 - i, w - 1 - j};
}

Tensor render_pca_topview(const Tensor& volume, const Tensor& mask, const PcaBasis& basis) {
  check_volume(volume, mask, "render_pca_topview");
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  Tensor img({3, h, w});
  const auto top = top_voxels(mask);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto v = top[i * w + j];
      if (v < 0) continue;
      const auto p = pca_project(basis, voxel_feature(volume, static_cast<std::size_t>(v)));
      const auto [r, q] = bev_to_pixel(i, j, h, w);
      for (std::size_t k = 0; k < 3; ++k) {
        const double lo = basis.range[k][0], hi = basis.range[k][1];
        const double t = hi > lo ? (p[k] - lo) / (hi - lo) : 0.5;
        img.at(k, r, q) = std::clamp(t, 0.0, 1.0);
      }
    }
  }
  return img;
}

Tensor correlation_map(const Tensor& volume, const VoxelIndex& query, const Tensor& mask) {
  check_volume(volume, mask, "correlation_map");
  const std::size_t z = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
  if (query.k >= z || query.i >= h || query.j >= w) {
    throw std::out_of_range("correlation_map: query (" + std::to_string(query.k) + "," +
                            std::to_string(query.i) + "," + std::to_string(query.j) +
                            ") outside the grid");
  }
  const std::size_t plane = h * w;
  const auto q = voxel_feature(volume, (query.k * h + query.i) * w + query.j);
  const double qn = std::sqrt(dotv(q, q));
  if (!(qn > 0.0)) throw std::invalid_argument("correlation_map: query feature is zero");

  Tensor out({h, w}, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t cell = 0; cell < plane; ++cell) {
    for (std::size_t k = 0; k < z; ++k) {
      const std::size_t v = k * plane + cell;
      if (mask[v] == 0.0) continue;
      const auto f = voxel_feature(volume, v);
      const double fn = std::sqrt(dotv(f, f));
      const double c = fn > 0.0 ? std::clamp(dotv(f, q) / (fn * qn), -1.0, 1.0) : 0.0;
      if (std::isnan(out[cell]) || c > out[cell]) out[cell] = c;
    }
  }
  return out;
}

std::array<double, 3> diverging_color(double value) {
  const double t = std::clamp(value, -1.0, 1.0);
  if (t >= 0.0) return {1.0, 1.0 - t, 1.0 - t};
  return {1.0 + t, 1.0 + t, 1.0};
}

Tensor render_correlation(const Tensor& volume, const VoxelIndex& query, const Tensor& mask) {
  const Tensor corr = correlation_map(volume, query, mask);
  const std::size_t h = corr.dim(0), w = corr.dim(1);
  Tensor img({3, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double c = corr.at(i, j);
      if (std::isnan(c)) continue;
      const auto rgb = diverging_color(c);
      const auto [r, q] = bev_to_pixel(i, j, h, w);
      for (std::size_t k = 0; k < 3; ++k) img.at(k, r, q) = rgb[k];
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& pixels) {
  if (pixels.ndim() != 3 || pixels.dim(0) != 3) {
    throw std::invalid_argument("encode_ppm: expected [3,H,W], got " + shape_string(pixels.dims()));
  }
  const std::size_t h = pixels.dim(1), w = pixels.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t q = 0; q < w; ++q) {
      for (std::size_t k = 0; k < 3; ++k) {
        double v = pixels.at(k, r, q);
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

void write_image(const Tensor& pixels, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(pixels);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace occfeat::viz
