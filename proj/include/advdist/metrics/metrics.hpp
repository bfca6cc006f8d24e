#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// One oracle query as the metrics see it.
struct QueryRecord {
  InstanceId instance_id = 0;
  double confidence = 1.0;
  bool is_error = false;
};

inline std::size_t error_count(std::span<const QueryRecord> records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.is_error ? 1 : 0;
  return n;
}

/// Standardized Discovery Ratio: discovered errors over the confidence-implied
/// expected error count sum(1 - p). Returns NaN when that expectation is zero.
inline double sdr_or_nan(std::span<const QueryRecord> records) {
  double expected = 0.0;
  for (const auto& r : records) expected += 1.0 - r.confidence;
  if (!(expected > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(error_count(records)) / expected;
}

inline double sdr(std::span<const QueryRecord> records) {
  if (records.empty()) throw ValidationError("SDR of an empty query set");
  for (const auto& r : records)
    if (!(r.confidence > 0.0 && r.confidence <= 1.0)) throw ValidationError("query confidence outside (0,1]");
  const double v = sdr_or_nan(records);
  if (std::isnan(v)) throw ValidationError("SDR undefined: every queried confidence is 1.0");
  return v;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

/// Mean over eval points of the distance to the nearest query point.
inline double spread(std::span<const std::vector<double>> eval_points, std::span<const std::vector<double>> query_points) {
  if (query_points.empty()) throw ValidationError("spread needs at least one queried instance");
  if (eval_points.empty()) throw ValidationError("spread needs a nonempty evaluation set");
  double total = 0.0;
  for (const auto& x : eval_points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : query_points) best = std::min(best, squared_distance(x, q));
    total += std::sqrt(best);
  }
  return total / static_cast<double>(eval_points.size());
}

/// Gaussian coverage of x by its nearest discovered error: exp(-d^2 / sigma^2),
/// and 0 when no error has been discovered.
inline double cover_value(std::span<const double> x, std::span<const std::vector<double>> errors, double sigma) {
  double best_d2 = std::numeric_limits<double>::infinity();
  for (const auto& e : errors) best_d2 = std::min(best_d2, squared_distance(x, e));
  if (!std::isfinite(best_d2)) return 0.0;
  return std::exp(-best_d2 / (sigma * sigma));
}

/// Bansal-Weld utility: sum_x c_x * Cover(x | Q).
inline double bw_utility(std::span<const double> confidences, std::span<const double> cover) {
  if (confidences.size() != cover.size()) throw ShapeError("confidence and cover vectors differ in length");
  double u = 0.0;
  for (std::size_t i = 0; i < cover.size(); ++i) u += confidences[i] * cover[i];
  return u;
}

}  // namespace advdist
