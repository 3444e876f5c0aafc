#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tsbo/gp.hpp"
#include "tsbo/qmc.hpp"

using namespace tsbo;

namespace {

Hyperparameters make_hp(std::initializer_list<double> ells, double s, double noise, double mean = 0.0) {
  Hyperparameters hp;
  hp.lengthscales = Vector(static_cast<int>(ells.size()));
  int i = 0;
  for (double e : ells) hp.lengthscales[i++] = e;
  hp.outputscale = s;
  hp.noise_variance = noise;
  hp.mean_const = mean;
  return hp;
}

Dataset dataset_1d(std::initializer_list<std::pair<double, double>> pts) {
  Dataset d;
  d.inputs.resize(static_cast<int>(pts.size()), 1);
  d.observations.resize(static_cast<int>(pts.size()));
  int i = 0;
  for (auto [x, v] : pts) {
    d.inputs(i, 0) = x;
    d.observations[i] = v;
    ++i;
  }
  d.bounds = BoundedBox::unit(1);
  return d;
}

}  // namespace

TEST_CASE("Matern-5/2 kernel values") {
  auto hp = make_hp({1.0}, 1.0, 0.0);
  Vector a(1), b(1);
  a << 0.3;
  b << 0.3;
  REQUIRE_THAT(kernel_matern52(hp, a, b), Catch::Matchers::WithinAbs(1.0, 1e-15));

  b << 1.3;  // unit distance
  REQUIRE_THAT(kernel_matern52(hp, a, b), Catch::Matchers::WithinAbs(0.5239941088318203, 1e-9));

  // ARD rescaling: distance 2 at lengthscale 2 equals distance 1 at lengthscale 1
  auto hp2 = make_hp({1.0, 2.0}, 1.0, 0.0);
  Vector p(2), q(2);
  p << 0.0, 0.0;
  q << 0.0, 2.0;
  REQUIRE_THAT(kernel_matern52(hp2, p, q), Catch::Matchers::WithinAbs(0.5239941088318203, 1e-12));

  Vector bad(3);
  REQUIRE_THROWS_AS(kernel_matern52(hp2, p, bad), std::invalid_argument);
}

TEST_CASE("posterior with no observations returns the prior") {
  Dataset d;
  d.inputs.resize(0, 1);
  d.observations.resize(0);
  d.bounds = BoundedBox::unit(1);
  SurrogateModel model(d, make_hp({0.5}, 2.0, 0.0, 0.7));

  Matrix q(3, 1);
  q << 0.1, 0.5, 0.9;
  Vector mean;
  Matrix cov;
  model.posterior(q, &mean, &cov);
  REQUIRE((mean.array() - 0.7).abs().maxCoeff() < 1e-14);
  REQUIRE_THAT(cov(0, 0), Catch::Matchers::WithinAbs(2.0, 1e-12));
  REQUIRE_THAT(cov(1, 0), Catch::Matchers::WithinAbs(kernel_matern52(model.hyperparameters(),
                                                                     model.normalize_point(q.row(1).transpose()),
                                                                     model.normalize_point(q.row(0).transpose())),
                                                     1e-12));
}

TEST_CASE("noiseless model interpolates its training data") {
  auto data = dataset_1d({{0.1, -0.4}, {0.45, 1.2}, {0.8, 0.3}});
  SurrogateModel model(data, make_hp({0.3}, 1.0, 1e-8));
  Vector mean;
  Matrix cov;
  model.posterior(data.inputs, &mean, &cov);
  REQUIRE((mean - data.observations).cwiseAbs().maxCoeff() < 1e-4);
  for (int i = 0; i < 3; ++i) REQUIRE(cov(i, i) <= 1e-6 * model.output_scale() * model.output_scale());
}

TEST_CASE("posterior mean matches a dense linear-algebra oracle") {
  // fixture: obs {(0,0),(1,1)}, l=0.5, s=1, mu=0, sigma^2=1e-8, query 0.5
  auto data = dataset_1d({{0.0, 0.0}, {1.0, 1.0}});
  SurrogateModel model(data, make_hp({0.5}, 1.0, 1e-8));

  // independent dense solve in untransformed coordinates
  auto hp = make_hp({0.5}, 1.0, 0.0);
  Matrix k(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      k(i, j) = kernel_matern52(hp, data.inputs.row(i).transpose(), data.inputs.row(j).transpose());
  k.diagonal().array() += 1e-8 + 1e-8;  // noise + base jitter, as the model applies
  // the model standardizes outputs; the oracle mirrors that transform
  const double a = data.observations.mean();
  const double b = std::sqrt((data.observations.array() - a).square().sum() / 1.0);
  Vector y = (data.observations.array() - a) / b;
  Vector kq(2);
  Vector q(1);
  q << 0.5;
  for (int i = 0; i < 2; ++i) kq[i] = kernel_matern52(hp, q, data.inputs.row(i).transpose());
  const double oracle = a + b * kq.dot(k.llt().solve(y));

  REQUIRE_THAT(model.posterior_mean_one(q), Catch::Matchers::WithinAbs(oracle, 1e-8));
}

TEST_CASE("posterior variance never exceeds the prior variance") {
  auto data = dataset_1d({{0.15, 0.3}, {0.4, -0.2}, {0.62, 0.9}, {0.91, 0.1}});
  SurrogateModel model(data, make_hp({0.25}, 3.0, 1e-4));
  Matrix q = sobol(1, 64, 3, true);
  Vector mean;
  Matrix cov;
  model.posterior(q, &mean, &cov);
  const double prior_var = 3.0 * model.output_scale() * model.output_scale();
  for (int i = 0; i < q.rows(); ++i) REQUIRE(cov(i, i) <= prior_var + 1e-8);
}

TEST_CASE("fantasy mean: z = 0 leaves the posterior unchanged") {
  auto data = dataset_1d({{0.2, 0.1}, {0.7, -0.6}});
  SurrogateModel model(data, make_hp({0.4}, 1.5, 1e-8));
  Matrix q = sobol(1, 16, 5, true);
  Vector x(1);
  x << 0.5;
  Vector fm = model.fantasy_mean(x, 0.0, q);
  REQUIRE((fm - model.posterior_mean(q)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fantasy mean self-update collapses to mean plus posterior sd") {
  auto data = dataset_1d({{0.2, 0.1}, {0.7, -0.6}});
  SurrogateModel model(data, make_hp({0.4}, 1.5, 1e-8));
  Vector x(1);
  x << 0.45;
  Matrix q(1, 1);
  q << 0.45;
  const double mean0 = model.posterior_mean_one(x);
  Vector mean;
  Matrix cov;
  model.posterior(q, &mean, &cov);  // raw-units variance
  const double fm = model.fantasy_mean(x, 1.0, q)[0];
  // with sigma^2 ~ 0, mu1(x) = mu(x) + k^n(x,x)/sqrt(k^n(x,x)) = mu(x) + sd(x)
  REQUIRE_THAT(fm, Catch::Matchers::WithinAbs(mean0 + std::sqrt(cov(0, 0)), 2e-4));
}

TEST_CASE("fantasy mean equals a full refit with the hypothesized point appended") {
  auto data = dataset_1d({{0.15, 0.4}, {0.55, -0.2}, {0.85, 0.7}});
  auto hp = make_hp({0.35}, 2.0, 1e-8);
  SurrogateModel model(data, hp);

  Vector x(1);
  x << 0.4;
  const double z = 0.83;
  Matrix q = sobol(1, 20, 11, true);
  Vector fm = model.fantasy_mean(x, z, q);

  // oracle: append v = mu(x) + z sqrt(k^n(x,x) + sigma^2) and refit. The
  // refit model must keep the same output transform and mean for the
  // comparison to be exact, so we pass the standardization through manually.
  const double mu_x = model.posterior_mean_one(x);
  Matrix qx(1, 1);
  qx << 0.4;
  Vector m0;
  Matrix c0;
  model.posterior(qx, &m0, &c0);
  const double pred_sd_raw = std::sqrt(
      c0(0, 0) + (hp.noise_variance + model.jitter()) * model.output_scale() * model.output_scale());
  const double v = mu_x + z * pred_sd_raw;

  Dataset aug = data;
  aug.inputs.conservativeResize(4, 1);
  aug.inputs(3, 0) = 0.4;
  aug.observations.conservativeResize(4);
  aug.observations[3] = v;

  // refit with identical hyperparameters in raw-output units: rebuild the
  // augmented posterior directly with dense algebra
  Matrix k(4, 4);
  auto hp_raw = make_hp({0.35}, 2.0 * model.output_scale() * model.output_scale(), 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      k(i, j) = kernel_matern52(hp_raw, aug.inputs.row(i).transpose(), aug.inputs.row(j).transpose());
  const double s2 = model.output_scale() * model.output_scale();
  k.diagonal().array() += (hp.noise_variance + model.jitter()) * s2;
  Vector mean_prior = Vector::Constant(4, model.output_shift() + model.output_scale() * hp.mean_const);
  Vector alpha = k.llt().solve(aug.observations - mean_prior);
  for (int i = 0; i < q.rows(); ++i) {
    Vector kq(4);
    for (int j = 0; j < 4; ++j) kq[j] = kernel_matern52(hp_raw, q.row(i).transpose(), aug.inputs.row(j).transpose());
    const double oracle = model.output_shift() + model.output_scale() * hp.mean_const + kq.dot(alpha);
    REQUIRE_THAT(fm[i], Catch::Matchers::WithinAbs(oracle, 1e-8));
  }
}

TEST_CASE("martingale property: fantasy means average back to the posterior mean") {
  auto data = dataset_1d({{0.2, 0.5}, {0.5, -0.3}, {0.75, 0.2}});
  SurrogateModel model(data, make_hp({0.3}, 1.0, 1e-8));
  Vector x(1);
  x << 0.6;
  Matrix q(2, 1);
  q << 0.35, 0.8;

  Matrix z = normal_sobol(1, 1 << 12, 21);
  Vector acc = Vector::Zero(2);
  for (int i = 0; i < z.rows(); ++i) acc += model.fantasy_mean(x, z(i, 0), q);
  acc /= static_cast<double>(z.rows());
  const Vector base = model.posterior_mean(q);
  const double tol = 1e-3 * std::sqrt(model.hyperparameters().outputscale) * model.output_scale();
  REQUIRE((acc - base).cwiseAbs().maxCoeff() <= tol);
}

TEST_CASE("posterior mean gradient matches central differences") {
  auto data = dataset_1d({{0.1, 0.2}, {0.4, 0.9}, {0.62, -0.4}, {0.9, 0.5}});
  SurrogateModel model(data, make_hp({0.3}, 1.2, 1e-6));
  Rng rng(17);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    Vector x(1);
    x << 0.05 + 0.9 * rng.uniform();
    bool near_data = false;
    for (int i = 0; i < data.size(); ++i)
      if (std::abs(data.inputs(i, 0) - x[0]) < 0.02) near_data = true;
    if (near_data) continue;
    Vector xp = x, xm = x;
    xp[0] += h;
    xm[0] -= h;
    const double fd = (model.posterior_mean_one(xp) - model.posterior_mean_one(xm)) / (2 * h);
    const double an = model.posterior_mean_grad(x)[0];
    REQUIRE_THAT(an, Catch::Matchers::WithinRel(fd, 1e-4));
  }
}

TEST_CASE("gamma log density") {
  REQUIRE_THAT(gamma_logpdf({1.0, 1.0}, 1.0), Catch::Matchers::WithinAbs(-1.0, 1e-12));
  REQUIRE_THAT(gamma_logpdf({3.0, 10.0}, 0.2), Catch::Matchers::WithinAbs(0.9957322735539909, 1e-4));
  REQUIRE(std::isinf(gamma_logpdf({2.0, 0.15}, -1.0)));
  REQUIRE(gamma_logpdf({2.0, 0.15}, -1.0) < 0.0);
  REQUIRE_THROWS_AS(gamma_logpdf({-1.0, 1.0}, 0.5), std::invalid_argument);

  // unimodality at the mode (alpha-1)/beta
  const GammaPrior g{2.0, 0.15};
  const double mode = (g.concentration - 1.0) / g.rate;
  REQUIRE(gamma_logpdf(g, mode) >= gamma_logpdf(g, 1.0));
  REQUIRE(gamma_logpdf(g, mode) >= gamma_logpdf(g, 20.0));
}

TEST_CASE("MAP fit respects the fixed-noise flag and is deterministic") {
  Rng rng(2);
  Dataset d;
  d.inputs = sobol(1, 12, 4, true);
  d.observations.resize(12);
  for (int i = 0; i < 12; ++i) d.observations[i] = std::sin(6.0 * d.inputs(i, 0)) + 0.05 * rng.normal();
  d.bounds = BoundedBox::unit(1);

  auto fit1 = fit_map(d, GpPriors{}, /*fix_noise=*/true, 7);
  REQUIRE(fit1.hp.noise_variance == 1e-8);

  auto fit2 = fit_map(d, GpPriors{}, true, 7);
  REQUIRE(fit1.hp.lengthscales[0] == fit2.hp.lengthscales[0]);
  REQUIRE(fit1.hp.outputscale == fit2.hp.outputscale);
  REQUIRE(fit1.hp.mean_const == fit2.hp.mean_const);
}

TEST_CASE("MAP fit recovers a known lengthscale within a factor of two") {
  // data drawn from the modeled family itself (exact GP draws via Cholesky)
  const double true_ell = 0.4, true_s = 10.0;
  int hits = 0;
  const int n_seeds = 20;
  for (int seed = 0; seed < n_seeds; ++seed) {
    const int n = 60;
    Matrix x = sobol(1, n, 100 + seed, true);
    auto hp = make_hp({true_ell}, true_s, 0.0);
    Matrix k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) k(i, j) = kernel_matern52(hp, x.row(i).transpose(), x.row(j).transpose());
    k.diagonal().array() += 1e-10;
    Matrix l = k.llt().matrixL();
    Rng rng(900 + seed);
    Vector z(n);
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    Dataset d;
    d.inputs = x;
    d.observations = l * z;
    d.bounds = BoundedBox::unit(1);

    auto fit = fit_map(d, GpPriors{}, true, 55 + seed);
    const double ratio = fit.hp.lengthscales[0] / true_ell;
    if (ratio > 0.5 && ratio < 2.0) ++hits;
  }
  REQUIRE(hits >= 18);  // >= 90% of seeds
}

TEST_CASE("cross-covariance cache is transparent and saves kernel work") {
  auto data = dataset_1d({{0.1, 0.2}, {0.35, 0.8}, {0.6, -0.1}, {0.9, 0.4}});
  SurrogateModel model(data, make_hp({0.3}, 1.0, 1e-8));
  Matrix disc = sobol(1, 20, 9, true);

  auto pinned = attach_cross_cache(model, disc);
  REQUIRE((pinned.posterior_mean() - model.posterior_mean(disc)).cwiseAbs().maxCoeff() == 0.0);

  // repeated fantasy evaluation: identical values through both paths
  Rng rng(5);
  Vector x(1);
  for (int rep = 0; rep < 5; ++rep) {
    x << rng.uniform();
    const double z = rng.normal();
    Vector via_cache = pinned.fantasy_mean(x, z);
    Vector direct = model.fantasy_mean(x, z, disc);
    REQUIRE((via_cache - direct).cwiseAbs().maxCoeff() < 1e-12);
  }

  // kernel-evaluation accounting: the cached path must do strictly less work
  const std::uint64_t before_cached = model.kernel_evals();
  for (int rep = 0; rep < 100; ++rep) {
    x << 0.01 * rep;
    pinned.fantasy_slopes_std(x);
  }
  const std::uint64_t cached_cost = model.kernel_evals() - before_cached;
  const std::uint64_t before_direct = model.kernel_evals();
  for (int rep = 0; rep < 100; ++rep) {
    x << 0.01 * rep;
    model.fantasy_slopes_std(x, disc);
  }
  const std::uint64_t direct_cost = model.kernel_evals() - before_direct;
  REQUIRE(cached_cost < direct_cost);

  // querying a point outside the pinned set through the cached path
  Vector alien(1);
  alien << 0.123456789;
  REQUIRE_THROWS_AS(pinned.fantasy_mean_at(alien, x, 0.3), std::logic_error);
  Vector member = disc.row(3).transpose();
  REQUIRE_NOTHROW(pinned.fantasy_mean_at(member, x, 0.3));
}

TEST_CASE("dataset and hyperparameter validation") {
  Dataset d;
  d.inputs.resize(2, 1);
  d.observations.resize(3);
  d.bounds = BoundedBox::unit(1);
  REQUIRE_THROWS_AS(d.validate(), std::invalid_argument);

  auto hp = make_hp({-0.1}, 1.0, 0.0);
  REQUIRE_THROWS_AS(hp.validate(), std::invalid_argument);
}
