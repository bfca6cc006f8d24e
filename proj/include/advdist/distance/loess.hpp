#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "advdist/common/errors.hpp"

namespace advdist {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Non-robust locally weighted regression (tricube kernel, degree 0 or 1).
/// Points are stored in (x, y) order, so a model does not depend on the order
/// its inputs arrived in.
class LoessModel {
public:
  LoessModel(std::vector<double> xs, std::vector<double> ys, double span, int degree)
      : xs_(std::move(xs)), ys_(std::move(ys)), span_(span), degree_(degree) {}

  std::span<const double> xs() const noexcept { return xs_; }
  std::span<const double> ys() const noexcept { return ys_; }
  double span() const noexcept { return span_; }
  int degree() const noexcept { return degree_; }

  /// Neighborhood size ceil(span * n).
  std::size_t neighborhood() const {
    const auto n = static_cast<double>(xs_.size());
    return std::min(xs_.size(), static_cast<std::size_t>(std::ceil(span_ * n)));
  }

  /// Local fit at x. Queries outside [min xs, max xs] are evaluated at the
  /// nearest endpoint.
  double predict(double x) const {
    const std::size_t n = xs_.size();
    x = std::clamp(x, xs_.front(), xs_.back());
    const std::size_t k = neighborhood();

    // The k nearest points of a sorted sample form a contiguous window; grow it
    // from the insertion point, preferring the left (lower-index) side on ties.
    std::size_t hi = static_cast<std::size_t>(std::lower_bound(xs_.begin(), xs_.end(), x) - xs_.begin());
    std::size_t lo = hi;  // window is [lo, hi)
    while (hi - lo < k) {
      if (lo == 0) {
        ++hi;
      } else if (hi == n) {
        --lo;
      } else if (x - xs_[lo - 1] <= xs_[hi] - x) {
        --lo;
      } else {
        ++hi;
      }
    }
    // Points tied with the k-th nearest distance join the window. They carry
    // zero tricube weight unless every neighbor is equidistant, where leaving
    // some out would make the fit depend on which duplicates were kept.
    const double kth = std::max(x - xs_[lo], xs_[hi - 1] - x);
    while (lo > 0 && x - xs_[lo - 1] <= kth) --lo;
    while (hi < n && xs_[hi] - x <= kth) ++hi;

    double dmax = 0.0;
    for (std::size_t i = lo; i < hi; ++i) dmax = std::max(dmax, std::abs(xs_[i] - x));
    std::vector<double> w(hi - lo, 1.0);
    double wsum = 0.0;
    if (dmax > 0.0) {
      for (std::size_t i = lo; i < hi; ++i) {
        const double u = std::abs(xs_[i] - x) / dmax;
        const double t = 1.0 - u * u * u;
        w[i - lo] = t * t * t;
        wsum += w[i - lo];
      }
    }
    if (wsum <= 0.0) {
      // Every neighbor sits at the same distance: uniform weights.
      std::fill(w.begin(), w.end(), 1.0);
      wsum = static_cast<double>(w.size());
    }

    double xbar = 0.0, ybar = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      xbar += w[i - lo] * xs_[i];
      ybar += w[i - lo] * ys_[i];
    }
    xbar /= wsum;
    ybar /= wsum;
    if (degree_ == 0) return ybar;

    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double dx = xs_[i] - xbar;
      sxx += w[i - lo] * dx * dx;
      sxy += w[i - lo] * dx * (ys_[i] - ybar);
    }
    // Degenerate local design (all weighted mass at one x): fall back to the local mean.
    const double scale = std::max(1.0, xbar * xbar);
    if (!(sxx / wsum > 1e-20 * scale)) return ybar;
    return ybar + (sxy / sxx) * (x - xbar);
  }

private:
  std::vector<double> xs_;
  std::vector<double> ys_;
  double span_;
  int degree_;
};

inline LoessModel fit_loess(std::span<const Point2> points, double span = 0.75, int degree = 1) {
  if (degree != 0 && degree != 1) throw ValidationError("LOESS degree must be 0 or 1");
  if (!(span > 0.0 && span <= 1.0)) throw ValidationError("LOESS span must lie in (0,1]");
  const auto need = static_cast<std::size_t>(degree + 1);
  if (points.size() < need)
    throw ValidationError("LOESS of degree " + std::to_string(degree) + " needs at least " + std::to_string(need) +
                          " points, got " + std::to_string(points.size()));
  if (std::ceil(span * static_cast<double>(points.size())) < static_cast<double>(need))
    throw ValidationError("LOESS span too small: span * n must be at least degree + 1");
  for (const auto& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("LOESS points must be finite");

  std::vector<Point2> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  std::vector<double> xs(sorted.size()), ys(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    xs[i] = sorted[i].x;
    ys[i] = sorted[i].y;
  }
  return LoessModel(std::move(xs), std::move(ys), span, degree);
}

inline double loess_predict(const LoessModel& model, double x) { return model.predict(x); }

}  // namespace advdist
