#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advdist/attack/mae.hpp"
#include "advdist/classifier/classifier.hpp"
#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

struct AttackParams {
  std::size_t max_model_queries = 5000;
  std::size_t init_trials = 100;
  /// Fraction of the remaining distance removed by each source step.
  double source_step = 0.01;
  /// Orthogonal step length, relative to the current distance.
  double orthogonal_step = 0.1;
  double step_adapt = 0.9;
  double convergence_mae_delta = 1e-5;
  /// Master seed; each instance walks on stream derive_seed(seed, id).
  std::uint64_t seed = 0;

  void validate() const {
    if (max_model_queries == 0) throw ValidationError("attack query budget must be positive");
    if (init_trials == 0) throw ValidationError("init_trials must be positive");
    if (!(source_step > 0.0) || !(orthogonal_step > 0.0))
      throw ValidationError("attack step sizes must be positive");
    if (!(step_adapt > 0.0 && step_adapt < 1.0)) throw ValidationError("step_adapt must lie in (0,1)");
    if (!(convergence_mae_delta >= 0.0)) throw ValidationError("convergence_mae_delta must be >= 0");
  }
};

struct TracePoint {
  std::size_t query_index = 0;
  double mae = 0.0;

  bool operator==(const TracePoint&) const = default;
};

/// What survives serialization of an attack (the CSV columns).
struct AttackSummary {
  InstanceId id = 0;
  double final_mae = 0.0;
  std::size_t queries_used = 0;
  bool converged = false;

  bool finite() const noexcept { return std::isfinite(final_mae); }
  bool operator==(const AttackSummary&) const = default;
};

struct AttackResult {
  InstanceId instance_id = 0;
  ImageTensor adversarial;
  double final_mae = 0.0;
  std::size_t queries_used = 0;
  /// (query index, MAE) for the initial point and every accepted step.
  std::vector<TracePoint> trace;
  bool converged = false;

  AttackSummary summary() const { return {instance_id, final_mae, queries_used, converged}; }
  bool operator==(const AttackResult&) const = default;
};

/// Sentinel for an instance whose attack could not be initialized: final MAE
/// is +inf and the "adversarial" image is the original.
inline AttackResult failed_attack(InstanceId id, const ImageTensor& original, std::size_t queries_used) {
  AttackResult r;
  r.instance_id = id;
  r.adversarial = original;
  r.final_mae = std::numeric_limits<double>::infinity();
  r.queries_used = queries_used;
  return r;
}

namespace detail {

inline constexpr std::size_t kAdaptWindow = 20;
inline constexpr double kLowAcceptance = 0.2;
inline constexpr double kHighAcceptance = 0.6;
inline constexpr std::size_t kConvergenceWindow = 50;
inline constexpr double kMaxSourceStep = 0.5;
inline constexpr double kMaxOrthogonalStep = 1.0;

inline ImageTensor to_image(const ImageShape& shape, std::span<const double> v) {
  std::vector<float> px(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) px[i] = static_cast<float>(std::clamp(v[i], 0.0, 1.0));
  return ImageTensor(shape, std::move(px));
}

}  // namespace detail

/// Decision-based boundary attack. Finds an image whose predicted label
/// differs from the original's, then walks along the decision boundary toward
/// the original, accepting a proposal only if it is still adversarial and its
/// MAE does not increase.
///
/// Initialization draws up to `init_trials` uniform-noise images; if none
/// flips the label it tries up to `init_trials` images from `starting_points`
/// (typically other evaluation images) in a seeded order. Every model call,
/// including the one on the original, counts against `max_model_queries`.
///
/// Throws InitFailure if no adversarial start is found, UnsupportedOperation
/// for classifiers that cannot score novel pixels.
inline AttackResult boundary_attack(const BlackBoxClassifier& classifier, const ImageTensor& original,
                                    const AttackParams& params, InstanceId instance_id = 0,
                                    std::span<const ImageTensor> starting_points = {}) {
  params.validate();
  if (!classifier.is_live())
    throw UnsupportedOperation("boundary attack needs a live classifier; cached predictions cannot score novel pixels");

  Rng rng(derive_seed(params.seed, instance_id));
  const ImageShape shape = original.shape();
  const std::size_t d = original.size();
  std::size_t queries = 0;
  auto query_label = [&](const ImageTensor& img) {
    ++queries;
    return classifier.predict(img).label;
  };

  const Label original_label = query_label(original);

  // Initialization.
  std::optional<ImageTensor> start;
  for (std::size_t t = 0; t < params.init_trials && queries < params.max_model_queries; ++t) {
    std::vector<float> px(d);
    for (auto& v : px) v = static_cast<float>(uniform01(rng));
    ImageTensor candidate(shape, std::move(px));
    if (query_label(candidate) != original_label) {
      start = std::move(candidate);
      break;
    }
  }
  if (!start && !starting_points.empty()) {
    std::vector<std::size_t> order(starting_points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t tries = std::min(order.size(), params.init_trials);
    for (std::size_t t = 0; t < tries && queries < params.max_model_queries; ++t) {
      const ImageTensor& candidate = starting_points[order[t]];
      if (!(candidate.shape() == shape)) throw ShapeError("starting point shape differs from the original");
      if (query_label(candidate) != original_label) {
        start = candidate;
        break;
      }
    }
  }
  if (!start)
    throw InitFailure("no adversarial starting point for instance " + std::to_string(instance_id) + " after " +
                      std::to_string(queries) + " queries");

  AttackResult result;
  result.instance_id = instance_id;
  result.adversarial = std::move(*start);
  result.final_mae = mae(original, result.adversarial);
  result.trace.push_back({queries, result.final_mae});

  const auto orig_px = original.pixels();
  std::vector<double> target(orig_px.begin(), orig_px.end());
  std::vector<double> current(d), diff(d), eta(d), cand(d);
  {
    auto px = result.adversarial.pixels();
    std::copy(px.begin(), px.end(), current.begin());
  }

  double source_step = params.source_step;
  double orthogonal_step = params.orthogonal_step;
  std::size_t window_proposals = 0, window_accepts = 0;
  std::normal_distribution<double> gauss(0.0, 1.0);

  while (queries < params.max_model_queries) {
    double dist2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      diff[i] = target[i] - current[i];
      dist2 += diff[i] * diff[i];
    }
    const double dist = std::sqrt(dist2);
    if (dist == 0.0) break;

    // Random direction orthogonal to the line toward the original, scaled to
    // orthogonal_step * dist, then projected back onto the sphere of radius
    // dist around the original, then a source step toward it.
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      eta[i] = gauss(rng);
      dot += eta[i] * diff[i];
    }
    double eta_norm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      eta[i] -= dot / dist2 * diff[i];
      eta_norm2 += eta[i] * eta[i];
    }
    const double eta_scale = eta_norm2 > 0.0 ? orthogonal_step * dist / std::sqrt(eta_norm2) : 0.0;
    double off2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      cand[i] = current[i] + eta[i] * eta_scale;
      const double o = cand[i] - target[i];
      off2 += o * o;
    }
    const double rescale = off2 > 0.0 ? dist / std::sqrt(off2) : 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double on_sphere = target[i] + (cand[i] - target[i]) * rescale;
      cand[i] = on_sphere + source_step * (target[i] - on_sphere);
    }

    ImageTensor candidate = detail::to_image(shape, cand);
    const Label label = query_label(candidate);
    const double cand_mae = mae(original, candidate);
    const bool accepted = label != original_label && cand_mae <= result.final_mae;
    ++window_proposals;
    if (accepted) {
      ++window_accepts;
      auto px = candidate.pixels();
      std::copy(px.begin(), px.end(), current.begin());
      result.adversarial = std::move(candidate);
      result.final_mae = cand_mae;
      result.trace.push_back({queries, cand_mae});
      const std::size_t n = result.trace.size();
      if (n > detail::kConvergenceWindow &&
          result.trace[n - 1 - detail::kConvergenceWindow].mae - cand_mae < params.convergence_mae_delta) {
        result.converged = true;
        break;
      }
    }
    if (window_proposals == detail::kAdaptWindow) {
      const double rate = static_cast<double>(window_accepts) / static_cast<double>(window_proposals);
      if (rate < detail::kLowAcceptance) {
        orthogonal_step *= params.step_adapt;
        source_step *= params.step_adapt;
      } else if (rate > detail::kHighAcceptance) {
        orthogonal_step = std::min(orthogonal_step / params.step_adapt, detail::kMaxOrthogonalStep);
        source_step = std::min(source_step / params.step_adapt, detail::kMaxSourceStep);
      }
      window_proposals = window_accepts = 0;
    }
  }
  result.queries_used = queries;
  return result;
}

}  // namespace advdist
