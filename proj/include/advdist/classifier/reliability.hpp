#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "advdist/classifier/prediction.hpp"
#include "advdist/common/errors.hpp"

namespace advdist {

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;

  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    return n;
  }
};

/// Equal-width, right-closed confidence bins over [lo, hi] (the first bin also
/// takes confidence == lo). Predictions outside the range are not scored.
inline ReliabilityReport reliability(std::span<const Prediction> predictions, std::span<const Label> labels,
                                     std::size_t n_bins, double lo = 0.5, double hi = 1.0) {
  if (n_bins == 0) throw ValidationError("reliability needs at least one bin");
  if (!(lo < hi)) throw ValidationError("reliability range must satisfy lo < hi");
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");

  const double width = (hi - lo) / static_cast<double>(n_bins);
  ReliabilityReport report;
  report.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), correct(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    report.bins[b].lower = lo + width * static_cast<double>(b);
    report.bins[b].upper = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double c = predictions[i].confidence;
    if (c < lo || c > hi) continue;
    auto b = static_cast<std::size_t>(std::ceil((c - lo) / width));
    b = b == 0 ? 0 : b - 1;
    if (b >= n_bins) b = n_bins - 1;
    // Guard against ceil() landing one bin off at exact edges.
    while (b > 0 && c <= report.bins[b].lower) --b;
    while (b + 1 < n_bins && c > report.bins[b].upper) ++b;
    report.bins[b].count += 1;
    conf_sum[b] += c;
    correct[b] += predictions[i].label == labels[i] ? 1.0 : 0.0;
  }
  const double total = static_cast<double>(report.total());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    const double n = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / n;
    bin.accuracy = correct[b] / n;
    report.ece += (n / total) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return report;
}

}  // namespace advdist
