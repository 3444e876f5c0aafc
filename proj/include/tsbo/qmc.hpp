#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tsbo/rng.hpp"

namespace tsbo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Standard normal inverse CDF (Wichura's AS 241, double precision).
// ---------------------------------------------------------------------------
inline double normal_icdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_icdf: p must lie in (0,1)");
  const double q = p - 0.5;
  double r, val;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    val = q *
          (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
               45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
            133.14166789178437745) * r + 3.387132872796366608) /
          (((((((5226.495278852545703 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
               21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
            42.313330701600911252) * r + 1.0);
    return val;
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) * 0.3989422804014326779; }

inline double Rng::normal() {
  return normal_icdf((static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53);
}

// ---------------------------------------------------------------------------
// Sobol' sequence, Joe-Kuo direction numbers, first 21 dimensions.
// Optional scrambling: random linear matrix scramble plus digital shift,
// keyed by seed. Unscrambled output is independent of the seed.
// ---------------------------------------------------------------------------
namespace detail {

struct SobolDim {
  int degree;
  std::uint32_t poly;                 // interior coefficient bits of the primitive polynomial
  std::array<std::uint32_t, 7> minit; // published initial direction numbers
};

inline constexpr int kSobolMaxDim = 21;
inline constexpr int kSobolBits = 32;

// Joe & Kuo "new-joe-kuo-6" table, dimensions 2..21 (dimension 1 is the
// van der Corput sequence).
inline constexpr std::array<SobolDim, 20> kJoeKuo = {{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
}};

inline std::vector<std::uint32_t> sobol_direction_numbers(int dim_index) {
  std::vector<std::uint32_t> v(kSobolBits);
  if (dim_index == 0) {
    for (int i = 0; i < kSobolBits; ++i) v[i] = 1u << (kSobolBits - 1 - i);
    return v;
  }
  const SobolDim& d = kJoeKuo[static_cast<std::size_t>(dim_index - 1)];
  const int s = d.degree;
  for (int i = 0; i < s; ++i) v[i] = d.minit[static_cast<std::size_t>(i)] << (kSobolBits - 1 - i);
  for (int i = s; i < kSobolBits; ++i) {
    v[i] = v[i - s] ^ (v[i - s] >> s);
    for (int k = 1; k < s; ++k)
      if ((d.poly >> (s - 1 - k)) & 1u) v[i] ^= v[i - k];
  }
  return v;
}

// Lower-triangular random bit matrix with unit diagonal, applied to a
// direction number over GF(2) (Matousek linear scramble). Rows are indexed
// from the most significant bit.
inline std::uint32_t apply_bit_matrix(const std::array<std::uint32_t, 32>& rows, std::uint32_t x) {
  std::uint32_t out = 0;
  for (int i = 0; i < 32; ++i) {
    std::uint32_t parity = static_cast<std::uint32_t>(__builtin_parity(rows[static_cast<std::size_t>(i)] & x));
    out |= parity << (31 - i);
  }
  return out;
}

}  // namespace detail

inline Matrix sobol(int dim, int n, std::uint64_t seed = 0, bool scrambled = false) {
  if (dim < 1 || n < 1) throw std::invalid_argument("sobol: dim and n must be >= 1");
  if (dim > detail::kSobolMaxDim)
    throw std::invalid_argument("sobol: dimension exceeds direction-number table (max 21)");

  std::vector<std::vector<std::uint32_t>> v(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) v[static_cast<std::size_t>(j)] = detail::sobol_direction_numbers(j);

  std::vector<std::uint32_t> shift(static_cast<std::size_t>(dim), 0);
  if (scrambled) {
    Rng rng(derive_seed(seed, 0x536f626fULL));
    for (int j = 0; j < dim; ++j) {
      // Digit i of the output mixes digits 0..i of the input (unit diagonal).
      // Digit k lives at bit (31 - k), so row i carries random bits at
      // positions 31 .. 32-i plus the pivot at bit (31 - i).
      std::array<std::uint32_t, 32> rows{};
      for (int i = 0; i < 32; ++i) {
        std::uint32_t above = (i == 0) ? 0u : (rng.next_u32() & (~0u << (32 - i)));
        rows[static_cast<std::size_t>(i)] = (1u << (31 - i)) | above;
      }
      auto& dir = v[static_cast<std::size_t>(j)];
      for (auto& d : dir) d = detail::apply_bit_matrix(rows, d);
      shift[static_cast<std::size_t>(j)] = rng.next_u32();
    }
  }

  Matrix out(n, dim);
  std::vector<std::uint32_t> x(static_cast<std::size_t>(dim), 0);
  constexpr double scale = 0x1.0p-32;
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      const unsigned c = static_cast<unsigned>(__builtin_ctz(static_cast<unsigned>(i)));
      for (int j = 0; j < dim; ++j) x[static_cast<std::size_t>(j)] ^= v[static_cast<std::size_t>(j)][c];
    }
    for (int j = 0; j < dim; ++j)
      out(i, j) = static_cast<double>(x[static_cast<std::size_t>(j)] ^ shift[static_cast<std::size_t>(j)]) * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latin hypercube: one point per stratum [i/n, (i+1)/n) in every column,
// strata permuted uniformly per column, uniform position within a stratum.
// ---------------------------------------------------------------------------
inline Matrix latin_hypercube(int dim, int n, std::uint64_t seed) {
  if (dim < 1 || n < 1) throw std::invalid_argument("latin_hypercube: dim and n must be >= 1");
  Rng rng(derive_seed(seed, 0x4c4843ULL));
  Matrix out(n, dim);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < dim; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    for (int i = 0; i < n; ++i)
      out(i, j) = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + rng.uniform()) / static_cast<double>(n);
  }
  return out;
}

// Sobol' points mapped through the standard normal inverse CDF. Coordinates
// that are exactly zero (the first unscrambled point) are moved to the
// midpoint of the first of n cells before the transform.
inline Matrix normal_sobol(int dim, int n, std::uint64_t seed = 0, bool scrambled = true) {
  Matrix u = sobol(dim, n, seed, scrambled);
  const double eps = 0.5 / static_cast<double>(n);
  for (int i = 0; i < u.rows(); ++i)
    for (int j = 0; j < u.cols(); ++j) {
      double p = u(i, j);
      if (p == 0.0) p = eps;
      u(i, j) = normal_icdf(p);
    }
  return u;
}

}  // namespace tsbo
