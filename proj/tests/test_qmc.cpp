#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "tsbo/qmc.hpp"

using namespace tsbo;

TEST_CASE("unscrambled Sobol' matches the published reference sequence") {
  Matrix m = sobol(1, 4, /*seed=*/123, /*scrambled=*/false);
  REQUIRE(m(0, 0) == 0.0);
  REQUIRE(m(1, 0) == 0.5);
  REQUIRE(m(2, 0) == 0.75);
  REQUIRE(m(3, 0) == 0.25);

  // seed must not matter without scrambling
  Matrix m2 = sobol(1, 4, /*seed=*/999, /*scrambled=*/false);
  REQUIRE((m - m2).cwiseAbs().maxCoeff() == 0.0);

  // reference values for the first 8 points in 6 dimensions
  Matrix r(8, 6);
  r << 0, 0, 0, 0, 0, 0,
      0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
      0.75, 0.25, 0.25, 0.25, 0.75, 0.75,
      0.25, 0.75, 0.75, 0.75, 0.25, 0.25,
      0.375, 0.375, 0.625, 0.875, 0.375, 0.125,
      0.875, 0.875, 0.125, 0.375, 0.875, 0.625,
      0.625, 0.125, 0.875, 0.625, 0.625, 0.875,
      0.125, 0.625, 0.375, 0.125, 0.125, 0.375;
  Matrix s6 = sobol(6, 8, 0, false);
  REQUIRE((s6 - r).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scrambled Sobol' stays in the unit cube and is seed-deterministic") {
  Matrix a = sobol(3, 8, 7, true);
  REQUIRE(a.minCoeff() >= 0.0);
  REQUIRE(a.maxCoeff() < 1.0);
  Matrix b = sobol(3, 8, 7, true);
  REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
  Matrix c = sobol(3, 8, 8, true);
  REQUIRE((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("Sobol' dyadic balance: one point per interval, scrambled or not") {
  for (std::uint64_t seed : {0ull, 7ull, 41ull}) {
    for (int dim = 1; dim <= 21; dim += 5) {
      for (int m : {3, 5}) {
        const int n = 1 << m;
        Matrix pts = sobol(dim, n, seed, seed != 0);
        for (int j = 0; j < dim; ++j) {
          std::set<int> cells;
          for (int i = 0; i < n; ++i) cells.insert(static_cast<int>(pts(i, j) * n));
          REQUIRE(cells.size() == static_cast<std::size_t>(n));
        }
      }
    }
  }
}

TEST_CASE("Sobol' rejects unsupported dimensions and bad arguments") {
  REQUIRE_THROWS_AS(sobol(22, 4, 0, false), std::invalid_argument);
  REQUIRE_THROWS_AS(sobol(0, 4, 0, false), std::invalid_argument);
  REQUIRE_THROWS_AS(sobol(1, 0, 0, false), std::invalid_argument);
}

TEST_CASE("Latin hypercube stratification") {
  Matrix m = latin_hypercube(2, 5, 1);
  for (int j = 0; j < 2; ++j) {
    std::vector<int> strata(5, 0);
    for (int i = 0; i < 5; ++i) strata[static_cast<std::size_t>(m(i, j) * 5)]++;
    for (int s : strata) REQUIRE(s == 1);
  }

  Matrix single = latin_hypercube(1, 1, 0);
  REQUIRE(single(0, 0) >= 0.0);
  REQUIRE(single(0, 0) < 1.0);

  Matrix x = latin_hypercube(4, 20, 3), y = latin_hypercube(4, 20, 3);
  REQUIRE((x - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Latin hypercube stratum multiset property across sizes") {
  for (int n : {2, 7, 16, 33}) {
    Matrix m = latin_hypercube(3, n, 99);
    for (int j = 0; j < 3; ++j) {
      std::vector<int> idx;
      for (int i = 0; i < n; ++i) idx.push_back(static_cast<int>(m(i, j) * n));
      std::sort(idx.begin(), idx.end());
      for (int i = 0; i < n; ++i) REQUIRE(idx[static_cast<std::size_t>(i)] == i);
    }
  }
}

TEST_CASE("normal inverse CDF reference values") {
  REQUIRE(normal_icdf(0.5) == 0.0);
  REQUIRE_THAT(normal_icdf(0.975), Catch::Matchers::WithinAbs(1.959963984540054, 1e-9));
  REQUIRE_THAT(normal_icdf(0.841345), Catch::Matchers::WithinAbs(1.0, 1e-5));
  REQUIRE_THROWS_AS(normal_icdf(0.0), std::domain_error);
  REQUIRE_THROWS_AS(normal_icdf(1.0), std::domain_error);
  REQUIRE_THROWS_AS(normal_icdf(-0.2), std::domain_error);

  // antisymmetry (tails are covered by the round-trip check below; there the
  // complement 1-p is not exactly representable and its rounding dominates)
  for (double p : {1e-3, 0.01, 0.2, 0.37, 0.49, 0.654, 0.91, 0.999}) {
    REQUIRE_THAT(normal_icdf(p) + normal_icdf(1.0 - p), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  // round trip against the CDF (lower tail only: the upper-tail CDF value is
  // quantized at ulp(1), which the steep inverse amplifies past 1e-9)
  for (double x = -6.0; x <= 0.0; x += 0.37) {
    REQUIRE_THAT(normal_icdf(normal_cdf(x)), Catch::Matchers::WithinAbs(x, 1e-9));
  }

  // frozen high-precision values at exactly representable arguments
  REQUIRE_THAT(normal_icdf(1.0 - 0x1.0p-30), Catch::Matchers::WithinAbs(6.0093535655307439, 1e-9));
  REQUIRE_THAT(normal_icdf(0.9999), Catch::Matchers::WithinAbs(3.7190164854557084, 1e-9));
  REQUIRE_THAT(normal_icdf(1e-10), Catch::Matchers::WithinAbs(-6.3613409024040562, 1e-9));
  REQUIRE_THAT(normal_icdf(0x1.0p-35), Catch::Matchers::WithinAbs(-6.5482693678317308, 1e-9));
}

TEST_CASE("normal Sobol' sample moments and finiteness") {
  Matrix z0 = normal_sobol(2, 4, 0, /*scrambled=*/false);
  REQUIRE(z0.allFinite());

  Matrix z = normal_sobol(1, 1 << 10, 5);
  REQUIRE(std::abs(z.mean()) < 0.05);

  Matrix z2 = normal_sobol(1, 1 << 14, 9);
  double mean = z2.mean();
  double var = (z2.array() - mean).square().sum() / static_cast<double>(z2.rows() - 1);
  REQUIRE(var > 0.97);
  REQUIRE(var < 1.03);
}
