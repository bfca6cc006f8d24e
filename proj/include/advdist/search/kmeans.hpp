#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/metrics/metrics.hpp"

namespace advdist {

inline constexpr std::size_t kDefaultClusters = 10;
inline constexpr std::size_t kKmeansIterations = 50;

struct Clustering {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
};

/// Lloyd's k-means with k-means++ seeding. Ties go to the lowest cluster
/// index; a cluster that empties keeps its previous centroid. k is capped at
/// the number of points.
inline Clustering kmeans(std::span<const std::vector<double>> points, std::size_t k, std::uint64_t seed,
                         std::size_t max_iter = kKmeansIterations) {
  if (points.empty()) throw ValidationError("k-means needs at least one point");
  if (k == 0) throw ValidationError("k-means needs k >= 1");
  const std::size_t n = points.size();
  k = std::min(k, n);
  Rng rng(seed);

  Clustering c;
  c.k = k;
  c.centroids.push_back(points[uniform_index(rng, n)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (c.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], c.centroids.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
    } else {
      pick = uniform_index(rng, n);  // all points coincide with centroids
    }
    c.centroids.push_back(points[pick]);
  }

  c.assignment.assign(n, 0);
  const std::size_t dim = points.front().size();
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double d = squared_distance(points[i], c.centroids[j]);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (best != c.assignment[i]) changed = true;
      c.assignment[i] = best;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[c.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) sum[c.assignment[i]][d] += points[i][d];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) c.centroids[j][d] = sum[j][d] / static_cast<double>(count[j]);
    }
  }
  return c;
}

}  // namespace advdist
