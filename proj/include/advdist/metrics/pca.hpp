#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/data/image.hpp"
#include "advdist/metrics/symmetric_eigen.hpp"

namespace advdist {

inline constexpr std::size_t kDefaultPcaComponents = 50;
/// Above this pixel dimension the covariance is not formed explicitly.
inline constexpr std::size_t kDensePcaMaxDim = 1024;

enum class PcaMethod { automatic, dense, power };

/// Principal-component feature space of an image collection.
struct FeatureSpace {
  std::size_t k = 0;
  std::size_t dim = 0;
  /// k x dim, row-major; rows orthonormal, by descending variance.
  std::vector<double> components;
  std::vector<double> mean;
  /// Variance captured by each component.
  std::vector<double> variances;
  double total_variance = 0.0;
  std::map<InstanceId, std::vector<double>> features;

  std::span<const double> component(std::size_t i) const { return {components.data() + i * dim, dim}; }

  std::vector<double> project(std::span<const float> pixels) const {
    if (pixels.size() != dim) throw ShapeError("projection input has the wrong dimension");
    std::vector<double> out(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      const double* row = components.data() + c * dim;
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += row[j] * (static_cast<double>(pixels[j]) - mean[j]);
      out[c] = s;
    }
    return out;
  }

  std::vector<double> project(const ImageTensor& image) const { return project(image.pixels()); }

  const std::vector<double>& features_of(InstanceId id) const {
    auto it = features.find(id);
    if (it == features.end()) throw LookupError("no PCA features for instance " + std::to_string(id));
    return it->second;
  }
};

namespace detail {

// First coordinate with non-negligible magnitude made positive.
inline void canonical_sign(std::span<double> v) {
  double mx = 0.0;
  for (double x : v) mx = std::max(mx, std::abs(x));
  for (double x : v) {
    if (std::abs(x) > 1e-12 * std::max(mx, 1e-300)) {
      if (x < 0)
        for (auto& y : v) y = -y;
      return;
    }
  }
}

inline std::vector<double> centered_data(std::span<const ImageTensor> images, std::vector<double>& mean) {
  const std::size_t n = images.size(), d = images.front().size();
  mean.assign(d, 0.0);
  for (const auto& img : images) {
    auto px = img.pixels();
    for (std::size_t j = 0; j < d; ++j) mean[j] += px[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto px = images[i].pixels();
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = px[j] - mean[j];
  }
  return x;
}

// Top-k eigenpairs of C = X^T X / (n-1) by power iteration with deflation;
// C is applied through X so it is never materialized.
inline void power_components(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k,
                             std::vector<double>& components, std::vector<double>& values) {
  constexpr double tol = 1e-9;
  constexpr std::size_t max_iter = 20000;
  Rng rng(derive_seed(0x5eed, d));
  std::normal_distribution<double> g(0.0, 1.0);
  components.assign(k * d, 0.0);
  values.assign(k, 0.0);
  std::vector<double> v(d), w(d), t(n);
  auto apply = [&](const std::vector<double>& in, std::vector<double>& out, std::size_t found) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * in[j];
      t[i] = s;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j] * t[i];
    for (auto& o : out) o /= static_cast<double>(n - 1);
    for (std::size_t c = 0; c < found; ++c) {
      const double* u = components.data() + c * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += u[j] * in[j];
      for (std::size_t j = 0; j < d; ++j) out[j] -= values[c] * dot * u[j];
    }
  };
  auto normalize = [](std::vector<double>& a) {
    double s = 0.0;
    for (double y : a) s += y * y;
    s = std::sqrt(s);
    if (s > 0)
      for (auto& y : a) y /= s;
    return s;
  };
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& y : v) y = g(rng);
    // Keep the start orthogonal to earlier components.
    for (std::size_t p = 0; p < c; ++p) {
      const double* u = components.data() + p * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += u[j] * v[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
    }
    normalize(v);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      apply(v, w, c);
      for (std::size_t p = 0; p < c; ++p) {
        const double* u = components.data() + p * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += u[j] * w[j];
        for (std::size_t j = 0; j < d; ++j) w[j] -= dot * u[j];
      }
      lambda = normalize(w);
      if (lambda == 0.0) break;
      double change = 0.0;
      for (std::size_t j = 0; j < d; ++j) change = std::max(change, std::abs(w[j] - v[j]));
      v.swap(w);
      if (change < tol) break;
    }
    std::copy(v.begin(), v.end(), components.begin() + static_cast<std::ptrdiff_t>(c * d));
    values[c] = lambda;
  }
}

}  // namespace detail

/// Mean-centered PCA of the images' pixel space, keeping k components.
/// Dense eigendecomposition of the sample covariance for dim <= 1024, power
/// iteration with deflation above that. Component signs are canonical
/// (first non-negligible coordinate positive).
inline FeatureSpace fit_pca(std::span<const ImageTensor> images, std::size_t k, std::span<const InstanceId> ids = {},
                            PcaMethod method = PcaMethod::automatic) {
  if (images.size() < 2) throw ValidationError("PCA needs at least two images");
  const std::size_t n = images.size(), d = images.front().size();
  for (const auto& img : images)
    if (img.size() != d) throw ShapeError("PCA images differ in size");
  if (k == 0 || k > std::min(n, d))
    throw ValidationError("PCA dimension " + std::to_string(k) + " must lie in [1, min(#images, D) = " +
                          std::to_string(std::min(n, d)) + "]");
  if (!ids.empty() && ids.size() != n) throw ShapeError("PCA ids must align with images");

  FeatureSpace fs;
  fs.k = k;
  fs.dim = d;
  const std::vector<double> x = detail::centered_data(images, fs.mean);
  for (double v : x) fs.total_variance += v * v;
  fs.total_variance /= static_cast<double>(n - 1);

  if (method == PcaMethod::automatic) method = d <= kDensePcaMaxDim ? PcaMethod::dense : PcaMethod::power;
  if (method == PcaMethod::dense) {
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = x.data() + i * d;
      for (std::size_t a = 0; a < d; ++a) {
        const double ra = row[a];
        if (ra == 0.0) continue;
        double* c = cov.data() + a * d;
        for (std::size_t b = a; b < d; ++b) c[b] += ra * row[b];
      }
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) {
        cov[a * d + b] /= static_cast<double>(n - 1);
        cov[b * d + a] = cov[a * d + b];
      }
    auto eig = symmetric_eigen(std::move(cov), d);
    fs.components.assign(eig.vectors.begin(), eig.vectors.begin() + static_cast<std::ptrdiff_t>(k * d));
    fs.variances.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    detail::power_components(x, n, d, k, fs.components, fs.variances);
  }
  for (std::size_t c = 0; c < k; ++c) detail::canonical_sign({fs.components.data() + c * d, d});

  for (std::size_t i = 0; i < n; ++i) {
    const InstanceId id = ids.empty() ? static_cast<InstanceId>(i) : ids[i];
    fs.features[id] = fs.project(images[i]);
  }
  return fs;
}

}  // namespace advdist
