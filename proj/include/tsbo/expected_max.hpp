#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tsbo/qmc.hpp"

namespace tsbo {

// A family of affine functions z -> a_i + b_i * z of a standard normal.
struct AffineFamily {
  std::vector<double> intercepts;
  std::vector<double> slopes;

  std::size_t size() const { return intercepts.size(); }
};

struct ExpectedMaxResult {
  double value = 0.0;
  // Partial derivatives of the expectation with respect to each line's
  // intercept and slope. Lines absent from the upper envelope get zeros.
  std::vector<double> d_intercept;
  std::vector<double> d_slope;
};

// E_Z[max_i (a_i + b_i Z)] for Z ~ N(0,1), computed exactly: sort lines by
// slope, discard those never attaining the upper envelope, then integrate
// segment by segment between envelope breakpoints,
//   E = sum_i a_i (Phi(c_{i+1}) - Phi(c_i)) + b_i (phi(c_i) - phi(c_{i+1})).
// The derivatives d/da_i and d/db_i are those same Phi and phi differences:
// boundary terms cancel because adjacent envelope lines agree at breakpoints.
inline ExpectedMaxResult expected_max_affine_with_grad(const AffineFamily& fam) {
  const std::size_t m = fam.size();
  if (m == 0 || fam.slopes.size() != m)
    throw std::invalid_argument("expected_max_affine: family must be nonempty and consistent");
  for (std::size_t i = 0; i < m; ++i)
    if (!std::isfinite(fam.intercepts[i]) || !std::isfinite(fam.slopes[i]))
      throw std::invalid_argument("expected_max_affine: entries must be finite");

  ExpectedMaxResult res;
  res.d_intercept.assign(m, 0.0);
  res.d_slope.assign(m, 0.0);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
    if (fam.slopes[p] != fam.slopes[q]) return fam.slopes[p] < fam.slopes[q];
    return fam.intercepts[p] < fam.intercepts[q];
  });

  // Merge lines whose slopes agree to within tolerance, keeping the larger
  // intercept; the dropped copy can never exceed the kept one.
  constexpr double kSlopeTol = 1e-12;
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (!kept.empty() && std::abs(fam.slopes[idx] - fam.slopes[kept.back()]) <= kSlopeTol) {
      if (fam.intercepts[idx] > fam.intercepts[kept.back()]) kept.back() = idx;
    } else {
      kept.push_back(idx);
    }
  }

  // Upper-envelope sweep over lines of strictly increasing slope. stack[k]
  // becomes active at breakpoint c[k] (c[0] = -inf).
  std::vector<std::size_t> stack;
  std::vector<double> c;  // c[k] = breakpoint where stack[k] takes over
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t idx : kept) {
    double z = -inf;
    while (!stack.empty()) {
      const std::size_t top = stack.back();
      z = (fam.intercepts[top] - fam.intercepts[idx]) / (fam.slopes[idx] - fam.slopes[top]);
      if (z > c.back()) break;
      stack.pop_back();
      c.pop_back();
    }
    stack.push_back(idx);
    c.push_back(stack.size() == 1 ? -inf : z);
  }

  c.push_back(inf);
  for (std::size_t k = 0; k < stack.size(); ++k) {
    const double lo = c[k], hi = c[k + 1];
    const double dPhi = (std::isinf(hi) ? 1.0 : normal_cdf(hi)) - (std::isinf(lo) ? 0.0 : normal_cdf(lo));
    const double dphi = (std::isinf(lo) ? 0.0 : normal_pdf(lo)) - (std::isinf(hi) ? 0.0 : normal_pdf(hi));
    const std::size_t i = stack[k];
    res.value += fam.intercepts[i] * dPhi + fam.slopes[i] * dphi;
    res.d_intercept[i] += dPhi;
    res.d_slope[i] += dphi;
  }
  return res;
}

inline double expected_max_affine(const AffineFamily& fam) {
  return expected_max_affine_with_grad(fam).value;
}

}  // namespace tsbo
