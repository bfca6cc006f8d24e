#pragma once

#include <cmath>

#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// Mean absolute per-pixel difference over all H*W*C positions.
inline double mae(const ImageTensor& a, const ImageTensor& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("MAE of " + a.shape().str() + " and " + b.shape().str() + " images");
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    sum += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
  return sum / static_cast<double>(pa.size());
}

}  // namespace advdist
