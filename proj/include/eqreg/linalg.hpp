#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "eqreg/common.hpp"

// Small dense helpers for the Anderson mixing system and the implicit-gradient
// oracle. Sizes here are tiny (Anderson memory <= ~5, oracle state <= 512).

namespace eqreg::linalg {

// Gaussian elimination with partial pivoting; A is n x n row-major and both A
// and b are overwritten. Returns the smallest absolute pivot encountered.
inline double solve_inplace(std::vector<double>& A, std::vector<double>& b,
                            std::size_t n) {
  double min_pivot = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(A[k * n + k]);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double v = std::abs(A[r * n + k]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (piv != k) {
      for (std::size_t c = k; c < n; ++c) std::swap(A[k * n + c], A[piv * n + c]);
      std::swap(b[k], b[piv]);
    }
    min_pivot = std::min(min_pivot, best);
    if (best == 0.0) return 0.0;
    const double inv = 1.0 / A[k * n + k];
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = A[r * n + k] * inv;
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) A[r * n + c] -= f * A[k * n + c];
      b[r] -= f * b[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double acc = b[k];
    for (std::size_t c = k + 1; c < n; ++c) acc -= A[k * n + c] * b[c];
    b[k] = acc / A[k * n + k];
  }
  return min_pivot;
}

// Smallest singular value via one-sided Jacobi orthogonalisation of the
// columns. Adequate for the small matrices the oracle error path sees.
inline double smallest_singular_value(std::vector<double> A, std::size_t n) {
  const auto col_dot = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t r = 0; r < n; ++r) s += A[r * n + i] * A[r * n + j];
    return s;
  };
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double aij = col_dot(i, j);
        const double aii = col_dot(i, i);
        const double ajj = col_dot(j, j);
        off = std::max(off, std::abs(aij) / (std::sqrt(aii * ajj) + 1e-300));
        if (std::abs(aij) < 1e-15 * std::sqrt(aii * ajj)) continue;
        const double zeta = (ajj - aii) / (2.0 * aij);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < n; ++r) {
          const double ai = A[r * n + i];
          const double aj = A[r * n + j];
          A[r * n + i] = c * ai - s * aj;
          A[r * n + j] = s * ai + c * aj;
        }
      }
    }
    if (off < 1e-13) break;
  }
  double smin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) smin = std::min(smin, std::sqrt(col_dot(j, j)));
  return smin;
}

}  // namespace eqreg::linalg
