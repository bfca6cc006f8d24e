#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "advdist/classifier/prediction.hpp"
#include "advdist/common/errors.hpp"

namespace advdist {

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;
inline constexpr double kTemperatureTolerance = 1e-4;

/// Mean negative log-likelihood of softmax(logits / T).
inline double temperature_nll(std::span<const std::vector<double>> logits, std::span<const Label> labels,
                              double temperature) {
  if (logits.size() != labels.size()) throw ShapeError("logit and label counts differ");
  if (logits.empty()) throw ValidationError("empty validation set");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& z = logits[i];
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= z.size()) throw ValidationError("label outside logit range");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v / temperature);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v / temperature - mx);
    total += (mx + std::log(lse)) - z[y] / temperature;
  }
  return total / static_cast<double>(logits.size());
}

/// Temperature minimizing validation NLL, by golden-section search on
/// [0.05, 20] down to a bracket of 1e-4. The result never scores worse than T = 1.
inline double fit_temperature(std::span<const std::vector<double>> logits, std::span<const Label> labels) {
  if (logits.empty()) throw ValidationError("cannot fit temperature on an empty validation set");
  if (logits.size() != labels.size()) throw ShapeError("logit and label counts differ");
  for (const auto& z : logits)
    for (double v : z)
      if (!std::isfinite(v)) throw ValidationError("validation logits must be finite");

  auto f = [&](double t) { return temperature_nll(logits, labels, t); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kMinTemperature, b = kMaxTemperature;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > kTemperatureTolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double best = (a + b) / 2.0;
  return f(best) <= f(1.0) ? best : 1.0;
}

}  // namespace advdist
