#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// M(x) = (predicted label, confidence), plus logits when the model exposes them.
struct Prediction {
  Label label = 0;
  double confidence = 1.0;
  std::optional<std::vector<double>> logits;

  bool operator==(const Prediction&) const = default;
};

/// Numerically stable softmax (max-subtracted).
inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw ValidationError("softmax of an empty logit vector");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  const double mx = *std::max_element(logits.begin(), logits.end()) / temperature;
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Prediction from raw (unscaled) logits; confidence is the max of
/// softmax(logits / temperature). The stored logits stay unscaled.
inline Prediction prediction_from_logits(std::vector<double> logits, double temperature = 1.0) {
  auto p = softmax(logits, temperature);
  const std::size_t k = argmax(logits);
  Prediction out;
  out.label = static_cast<Label>(k);
  out.confidence = p[k];
  out.logits = std::move(logits);
  return out;
}

}  // namespace advdist
