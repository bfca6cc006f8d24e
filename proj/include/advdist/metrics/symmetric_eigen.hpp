#pragma once

// Dense symmetric eigendecomposition: Householder reduction to tridiagonal
// form followed by the implicit QL algorithm (the classic EISPACK tred2/tql2
// pair, as popularized by JAMA).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "advdist/common/errors.hpp"

namespace advdist {

struct SymmetricEigen {
  /// Eigenvalues in descending order.
  std::vector<double> values;
  /// Eigenvectors as rows (n x n, row-major), aligned with `values`.
  std::vector<double> vectors;
  std::size_t n = 0;

  std::span<const double> vector(std::size_t i) const { return {vectors.data() + i * n, n}; }
};

namespace detail {

// V holds the matrix on entry and the orthogonal transform on exit (columns).
inline void tridiagonalize(std::size_t n, std::vector<double>& V, std::vector<double>& d, std::vector<double>& e) {
  auto at = [&](std::size_t r, std::size_t c) -> double& { return V[r * n + c]; };
  for (std::size_t j = 0; j < n; ++j) d[j] = at(n - 1, j);

  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = at(i - 1, j);
        at(i, j) = 0.0;
        at(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        at(j, i) = f;
        g = e[j] + at(j, j) * f;
        for (std::size_t k = j + 1; k + 1 <= i; ++k) {
          g += at(k, j) * d[k];
          e[k] += at(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k + 1 <= i; ++k) at(k, j) -= (f * e[k] + g * d[k]);
        d[j] = at(i - 1, j);
        at(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  for (std::size_t i = 0; i + 1 < n; ++i) {
    at(n - 1, i) = at(i, i);
    at(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = at(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += at(k, i + 1) * at(k, j);
        for (std::size_t k = 0; k <= i; ++k) at(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) at(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = at(n - 1, j);
    at(n - 1, j) = 0.0;
  }
  at(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

inline void tridiagonal_ql(std::size_t n, std::vector<double>& V, std::vector<double>& d, std::vector<double>& e) {
  auto at = [&](std::size_t r, std::size_t c) -> double& { return V[r * n + c]; };
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m == n) m = n - 1;  // e[n-1] == 0, unreachable in exact arithmetic
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 300) throw DegenerateDataError("symmetric eigensolver failed to converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          const std::size_t i = ii;
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          for (std::size_t k = 0; k < n; ++k) {
            h = at(k, i + 1);
            at(k, i + 1) = s * at(k, i) + c * h;
            at(k, i) = c * at(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace detail

/// Eigendecomposition of a symmetric n x n matrix given row-major.
inline SymmetricEigen symmetric_eigen(std::vector<double> matrix, std::size_t n) {
  if (matrix.size() != n * n) throw ShapeError("symmetric_eigen expects an n x n matrix");
  SymmetricEigen out;
  out.n = n;
  if (n == 0) return out;
  std::vector<double> d(n), e(n);
  if (n == 1) {
    out.values = {matrix[0]};
    out.vectors = {1.0};
    return out;
  }
  detail::tridiagonalize(n, matrix, d, e);
  detail::tridiagonal_ql(n, matrix, d, e);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t col = order[r];
    out.values[r] = d[col];
    for (std::size_t k = 0; k < n; ++k) out.vectors[r * n + k] = matrix[k * n + col];
  }
  return out;
}

}  // namespace advdist
