#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/data/image.hpp"
#include "advdist/metrics/metrics.hpp"
#include "advdist/search/kmeans.hpp"

namespace advdist {

/// An evaluation instance as a search sees it. adv_dist is NaN when the
/// instance has no Adversarial Distance (e.g. its attack failed).
struct EvalRecord {
  InstanceId instance_id = 0;
  double confidence = 1.0;
  Label predicted_label = 0;
  double adv_dist = std::numeric_limits<double>::quiet_NaN();
};

enum class Strategy { advdist, random, low_confidence, bandit, coverage };

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> v{Strategy::advdist, Strategy::random, Strategy::low_confidence, Strategy::bandit,
                                       Strategy::coverage};
  return v;
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::advdist: return "advdist";
    case Strategy::random: return "random";
    case Strategy::low_confidence: return "low-confidence";
    case Strategy::bandit: return "bandit";
    case Strategy::coverage: return "coverage";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& name) {
  for (auto s : all_strategies())
    if (to_string(s) == name) return s;
  throw ValidationError("unknown strategy '" + name +
                        "' (expected advdist, random, low-confidence, bandit or coverage)");
}

/// Median Euclidean distance over all unordered pairs; 0 for fewer than two points.
inline double median_pairwise_distance(std::span<const std::vector<double>> points) {
  const std::size_t n = points.size();
  if (n < 2) return 0.0;
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.push_back(squared_distance(points[i], points[j]));
  const std::size_t m = d.size();
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m / 2), d.end());
  const double upper = d[m / 2];
  if (m % 2 == 1) return std::sqrt(upper);
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m / 2));
  return 0.5 * (std::sqrt(lower) + std::sqrt(upper));
}

/// Cover-kernel bandwidth: the median pairwise distance, or 1 when that is
/// zero (one point, or all points coincide).
inline double default_bandwidth(std::span<const std::vector<double>> points) {
  const double s = median_pairwise_distance(points);
  return s > 0.0 ? s : 1.0;
}

/// Everything a search runs over: the eval records, their feature vectors
/// (aligned), and the cover-kernel bandwidth.
struct SearchPool {
  std::vector<EvalRecord> records;
  std::vector<std::vector<double>> features;
  double sigma = 1.0;

  std::size_t size() const noexcept { return records.size(); }

  std::size_t index_of(InstanceId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("instance " + std::to_string(id) + " is not in the search pool");
    return it->second;
  }
  bool contains(InstanceId id) const { return index_.contains(id); }

  static SearchPool make(std::vector<EvalRecord> records, std::vector<std::vector<double>> features, double sigma) {
    if (records.empty()) throw ValidationError("search pool is empty");
    if (features.size() != records.size()) throw ShapeError("search pool features do not align with records");
    if (!(sigma > 0.0 && std::isfinite(sigma))) throw ValidationError("cover bandwidth must be positive and finite");
    SearchPool p;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (!(r.confidence > 0.0 && r.confidence <= 1.0))
        throw ValidationError("confidence of instance " + std::to_string(r.instance_id) + " outside (0,1]");
      if (features[i].size() != features.front().size()) throw ShapeError("search pool features differ in dimension");
      if (!p.index_.emplace(r.instance_id, i).second)
        throw ValidationError("duplicate instance id " + std::to_string(r.instance_id) + " in search pool");
    }
    p.records = std::move(records);
    p.features = std::move(features);
    p.sigma = sigma;
    return p;
  }

private:
  std::unordered_map<InstanceId, std::size_t> index_;
};

using QueriedSet = std::unordered_set<InstanceId>;

namespace detail {

// NaN keys sort after every number.
inline bool key_less(double a, InstanceId ia, double b, InstanceId ib) {
  const bool na = std::isnan(a), nb = std::isnan(b);
  if (na != nb) return nb;
  if (!na && a != b) return a < b;
  return ia < ib;
}

template <typename Key>
InstanceId argmin_unqueried(std::span<const EvalRecord> records, const QueriedSet& queried, Key key) {
  const EvalRecord* best = nullptr;
  for (const auto& r : records) {
    if (queried.contains(r.instance_id)) continue;
    if (!best || key_less(key(r), r.instance_id, key(*best), best->instance_id)) best = &r;
  }
  if (!best) throw ExhaustionError("every instance has already been queried");
  return best->instance_id;
}

}  // namespace detail

/// Lowest Adversarial Distance among unqueried records, ties by lowest id.
inline InstanceId advdist_next(std::span<const EvalRecord> records, const QueriedSet& queried) {
  return detail::argmin_unqueried(records, queried, [](const EvalRecord& r) { return r.adv_dist; });
}

inline InstanceId low_confidence_next(std::span<const EvalRecord> records, const QueriedSet& queried) {
  return detail::argmin_unqueried(records, queried, [](const EvalRecord& r) { return r.confidence; });
}

/// Uniform over unqueried ids (taken in ascending id order so the draw does
/// not depend on record order).
inline InstanceId random_next(std::span<const EvalRecord> records, const QueriedSet& queried, Rng& rng) {
  std::vector<InstanceId> open;
  for (const auto& r : records)
    if (!queried.contains(r.instance_id)) open.push_back(r.instance_id);
  if (open.empty()) throw ExhaustionError("every instance has already been queried");
  std::sort(open.begin(), open.end());
  return open[uniform_index(rng, open.size())];
}

/// Cluster membership shared by the bandit and coverage searches. Members are
/// pool indices in ascending order.
struct ClusterIndex {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> cluster_of;
  std::vector<std::vector<double>> centroids;

  static ClusterIndex build(std::span<const std::vector<double>> features, std::size_t k, std::uint64_t seed) {
    Clustering c = kmeans(features, k, seed);
    ClusterIndex idx;
    idx.members.resize(c.k);
    idx.cluster_of = c.assignment;
    idx.centroids = std::move(c.centroids);
    for (std::size_t i = 0; i < c.assignment.size(); ++i) idx.members[c.assignment[i]].push_back(i);
    return idx;
  }

  std::size_t size() const noexcept { return members.size(); }

  std::vector<std::size_t> open_members(std::size_t cluster, const std::vector<bool>& queried) const {
    std::vector<std::size_t> out;
    for (auto i : members[cluster])
      if (!queried[i]) out.push_back(i);
    return out;
  }
};

/// UCB over clusters on the Laplace-smoothed error rate.
struct BanditState {
  ClusterIndex clusters;
  std::vector<std::size_t> pulls;
  std::vector<std::size_t> errors;
  double exploration = std::numbers::sqrt2;

  explicit BanditState(ClusterIndex c) : clusters(std::move(c)), pulls(clusters.size(), 0), errors(clusters.size(), 0) {}

  std::size_t total_pulls() const {
    std::size_t t = 0;
    for (auto n : pulls) t += n;
    return t;
  }

  double score(std::size_t i) const {
    const double n = static_cast<double>(pulls[i]), e = static_cast<double>(errors[i]);
    const double t = static_cast<double>(total_pulls());
    return (e + 1.0) / (n + 2.0) + exploration * std::sqrt(std::log(t + 1.0) / (n + 1.0));
  }

  /// Best-scoring cluster with an unqueried member; lowest index on ties.
  std::size_t choose(const std::vector<bool>& queried) const {
    std::size_t best = clusters.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      if (clusters.open_members(i, queried).empty()) continue;
      const double s = score(i);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    if (best == clusters.size()) throw ExhaustionError("every cluster is exhausted");
    return best;
  }

  void update(std::size_t cluster, bool is_error) {
    ++pulls[cluster];
    if (is_error) ++errors[cluster];
  }
};

/// Returns the pool index of the next query.
inline std::size_t bandit_next(const BanditState& state, const std::vector<bool>& queried, Rng& rng) {
  const auto open = state.clusters.open_members(state.choose(queried), queried);
  return open[uniform_index(rng, open.size())];
}

/// Greedy expected-utility search over clusters with Gaussian cover.
struct CoverageState {
  ClusterIndex clusters;
  std::vector<std::size_t> pulls;
  std::vector<std::size_t> errors;
  std::vector<double> cover;
  double sigma = 1.0;

  CoverageState(ClusterIndex c, std::size_t pool_size, double bandwidth)
      : clusters(std::move(c)), pulls(clusters.size(), 0), errors(clusters.size(), 0), cover(pool_size, 0.0),
        sigma(bandwidth) {}

  double error_probability(std::size_t cluster) const {
    return (static_cast<double>(errors[cluster]) + 1.0) / (static_cast<double>(pulls[cluster]) + 2.0);
  }

  /// Utility added if `candidate` turned out to be an error.
  double gain(const SearchPool& pool, std::size_t candidate) const {
    double g = 0.0;
    const auto& e = pool.features[candidate];
    for (std::size_t x = 0; x < pool.size(); ++x) {
      const double k = std::exp(-squared_distance(pool.features[x], e) / (sigma * sigma));
      g += pool.records[x].confidence * std::max(0.0, k - cover[x]);
    }
    return g;
  }

  /// Unqueried member nearest the centroid; lowest index on ties.
  std::size_t representative(std::size_t cluster, const SearchPool& pool, const std::vector<bool>& queried) const {
    std::size_t best = pool.size();
    double bd = std::numeric_limits<double>::infinity();
    for (auto i : clusters.members[cluster]) {
      if (queried[i]) continue;
      const double d = squared_distance(pool.features[i], clusters.centroids[cluster]);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  }

  std::size_t choose(const SearchPool& pool, const std::vector<bool>& queried) const {
    std::size_t best = clusters.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const std::size_t rep = representative(c, pool, queried);
      if (rep == pool.size()) continue;
      const double s = error_probability(c) * gain(pool, rep);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == clusters.size()) throw ExhaustionError("every cluster is exhausted");
    return best;
  }

  void update(const SearchPool& pool, std::size_t index, bool is_error) {
    const std::size_t c = clusters.cluster_of[index];
    ++pulls[c];
    if (!is_error) return;
    ++errors[c];
    const auto& e = pool.features[index];
    for (std::size_t x = 0; x < pool.size(); ++x)
      cover[x] = std::max(cover[x], std::exp(-squared_distance(pool.features[x], e) / (sigma * sigma)));
  }
};

inline std::size_t coverage_next(const CoverageState& state, const SearchPool& pool, const std::vector<bool>& queried,
                                 Rng& rng) {
  const auto open = state.clusters.open_members(state.choose(pool, queried), queried);
  return open[uniform_index(rng, open.size())];
}

}  // namespace advdist
