#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tsbo/lbfgsb.hpp"
#include "tsbo/qmc.hpp"
#include "tsbo/rng.hpp"

namespace tsbo {

struct Hyperparameters {
  Vector lengthscales;          // one per input dimension, normalized-input units
  double outputscale = 1.0;     // variance of the standardized outputs
  double noise_variance = 1e-8;
  double mean_const = 0.0;      // constant mean, standardized-output units

  void validate() const {
    if ((lengthscales.array() <= 0.0).any() || outputscale <= 0.0 || noise_variance < 0.0)
      throw std::invalid_argument("Hyperparameters: lengthscales and outputscale must be positive");
  }
};

struct GammaPrior {
  double concentration = 1.0;  // alpha
  double rate = 1.0;           // beta
};

// log of the Gamma(alpha, beta) density beta^alpha / Gamma(alpha) z^(alpha-1) e^(-beta z).
// Nonpositive z yields -inf (zero density), distinct from argument errors.
inline double gamma_logpdf(const GammaPrior& prior, double z) {
  if (prior.concentration <= 0.0 || prior.rate <= 0.0)
    throw std::invalid_argument("gamma_logpdf: concentration and rate must be positive");
  if (z <= 0.0) return -std::numeric_limits<double>::infinity();
  return prior.concentration * std::log(prior.rate) - std::lgamma(prior.concentration) +
         (prior.concentration - 1.0) * std::log(z) - prior.rate * z;
}

struct GpPriors {
  GammaPrior lengthscale{3.0, 10.0};
  GammaPrior outputscale{2.0, 0.15};
  GammaPrior noise_variance{1.1, 0.05};
};

// Matern-5/2 with automatic relevance determination,
//   k(a, b) = s (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r),
//   r^2 = sum_i ((a_i - b_i) / l_i)^2.
inline double kernel_matern52(const Hyperparameters& hp, const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() != hp.lengthscales.size())
    throw std::invalid_argument("kernel_matern52: dimension mismatch");
  const double r2 = ((a - b).array() / hp.lengthscales.array()).square().sum();
  const double r = std::sqrt(r2);
  constexpr double sqrt5 = 2.2360679774997896964;
  return hp.outputscale * (1.0 + sqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-sqrt5 * r);
}

// Training inputs, observations, and the affine maps used to place them in
// model units: inputs are rescaled to the unit cube of `bounds`, outputs are
// standardized to zero mean and unit variance.
struct Dataset {
  Matrix inputs;        // raw units, one point per row
  Vector observations;  // raw units
  BoundedBox bounds;    // normalization box, raw units

  void validate() const {
    if (inputs.rows() != observations.size())
      throw std::invalid_argument("Dataset: inputs and observations must have equal length");
    if (inputs.rows() > 0 && inputs.cols() != bounds.dim())
      throw std::invalid_argument("Dataset: input dimension does not match bounds");
  }

  int size() const { return static_cast<int>(inputs.rows()); }
};

class PinnedDiscretization;  // forward

class SurrogateModel {
 public:
  SurrogateModel(Dataset data, Hyperparameters hp) : data_(std::move(data)), hp_(std::move(hp)) {
    data_.validate();
    hp_.validate();
    dim_ = data_.bounds.dim();
    if (hp_.lengthscales.size() != dim_)
      throw std::invalid_argument("SurrogateModel: lengthscale count does not match input dimension");

    const int n = data_.size();
    x_norm_.resize(n, dim_);
    for (int i = 0; i < n; ++i) x_norm_.row(i) = normalize_point(data_.inputs.row(i).transpose()).transpose();

    out_shift_ = 0.0;
    out_scale_ = 1.0;
    if (n >= 2) {
      out_shift_ = data_.observations.mean();
      const double var =
          (data_.observations.array() - out_shift_).square().sum() / static_cast<double>(n - 1);
      out_scale_ = std::sqrt(var);
      if (!(out_scale_ > 1e-12)) out_scale_ = 1.0;
    } else if (n == 1) {
      out_shift_ = data_.observations[0];
    }
    y_std_ = (data_.observations.array() - out_shift_) / out_scale_;

    jitter_ = 1e-8 * hp_.outputscale;
    if (n > 0) factorize();
  }

  int input_dim() const { return dim_; }
  int num_points() const { return data_.size(); }
  const Hyperparameters& hyperparameters() const { return hp_; }
  const Dataset& dataset() const { return data_; }
  double output_shift() const { return out_shift_; }
  double output_scale() const { return out_scale_; }
  double jitter() const { return jitter_; }
  std::uint64_t kernel_evals() const { return kernel_evals_.load(std::memory_order_relaxed); }

  Vector normalize_point(const Vector& raw) const {
    return (raw - data_.bounds.lo).cwiseQuotient(data_.bounds.hi - data_.bounds.lo);
  }

  Matrix normalize_points(const Matrix& raw) const {
    Matrix out(raw.rows(), raw.cols());
    for (int i = 0; i < raw.rows(); ++i) out.row(i) = normalize_point(raw.row(i).transpose()).transpose();
    return out;
  }

  // Exact GP conditionals at the query rows (raw units). With no training
  // data this returns the prior. The covariance output is optional.
  void posterior(const Matrix& queries_raw, Vector* mean, Matrix* cov) const {
    if (queries_raw.rows() == 0) throw std::invalid_argument("posterior: queries must be nonempty");
    const Matrix q = normalize_points(queries_raw);
    const int m = static_cast<int>(q.rows());
    const int n = num_points();

    Matrix kqx;  // m x n
    if (n > 0) kqx = kernel_cross(q, x_norm_);

    if (mean) {
      Vector mu_std = Vector::Constant(m, hp_.mean_const);
      if (n > 0) mu_std += kqx * alpha_;
      *mean = (mu_std.array() * out_scale_ + out_shift_).matrix();
    }
    if (cov) {
      Matrix kqq = kernel_cross(q, q);
      if (n > 0) {
        const Matrix v = llt_.matrixL().solve(kqx.transpose());  // n x m
        kqq -= v.transpose() * v;
      }
      *cov = kqq * (out_scale_ * out_scale_);
    }
  }

  Vector posterior_mean(const Matrix& queries_raw) const {
    Vector mean;
    posterior(queries_raw, &mean, nullptr);
    return mean;
  }

  double posterior_mean_one(const Vector& q_raw) const {
    return posterior_mean(q_raw.transpose())[0];
  }

  // Gradient of the posterior mean with respect to the raw query coordinates.
  Vector posterior_mean_grad(const Vector& q_raw) const {
    const Vector q = normalize_point(q_raw);
    Vector grad_norm = Vector::Zero(dim_);
    if (num_points() > 0) {
      const Matrix j = kernel_cross_grad(q);  // n x d, d k(x_i, q) / d q
      grad_norm = j.transpose() * alpha_;
    }
    return out_scale_ * grad_norm.cwiseQuotient(data_.bounds.hi - data_.bounds.lo);
  }

  // Predictive standard deviation of the next observation at x (raw units,
  // standardized-output scale): sqrt(k^n(x, x) + sigma^2 + jitter). The jitter
  // term keeps the rank-1 fantasy update identical to a refit, which would
  // place the same diagonal perturbation on the appended point.
  double predictive_sd_std(const Vector& x_raw) const {
    const Vector x = normalize_point(x_raw);
    double kn = kernel_one(x, x);
    if (num_points() > 0) {
      const Vector kx = kernel_vec(x);
      const Vector v = llt_.matrixL().solve(kx);
      kn -= v.squaredNorm();
    }
    return std::sqrt(std::max(kn, 0.0) + hp_.noise_variance + jitter_);
  }

  // Fantasy scale sqrt(k^n(x,x) + sigma^2 + jitter), or zero when the
  // predictive variance has collapsed below the resolvable floor (1e-6 s),
  // e.g. at a noiseless training input. A zero scale defines the rank-1
  // fantasy term away entirely.
  double fantasy_scale_std(double kn_xx_std) const {
    const double var = std::max(kn_xx_std, 0.0) + hp_.noise_variance + jitter_;
    if (var <= 1e-6 * hp_.outputscale) return 0.0;
    return std::sqrt(var);
  }

  double fantasy_scale_std_at(const Vector& x_raw) const {
    const Vector x = normalize_point(x_raw);
    double kn = kernel_one(x, x);
    if (num_points() > 0) {
      const Vector kx = kernel_vec(x);
      kn -= llt_.matrixL().solve(kx).squaredNorm();
    }
    return fantasy_scale_std(kn);
  }

  // Posterior mean after appending a hypothesized observation at x (raw) with
  // standard-normal base sample z, evaluated at the query rows. Affine in z:
  //   mu1(q) = mu(q) + lambda(q) z,  lambda(q) = k^n(q, x) / sqrt(k^n(x,x) + sigma^2).
  Vector fantasy_mean(const Vector& x_raw, double z, const Matrix& queries_raw) const {
    Vector mean = posterior_mean(queries_raw);
    const Vector lam = fantasy_slopes_std(x_raw, queries_raw);
    return mean + out_scale_ * z * lam;
  }

  // lambda(q) over query rows, standardized-output units.
  Vector fantasy_slopes_std(const Vector& x_raw, const Matrix& queries_raw) const {
    const Vector x = normalize_point(x_raw);
    const Matrix q = normalize_points(queries_raw);
    const double denom = fantasy_scale_std_at(x_raw);
    if (denom == 0.0) return Vector::Zero(q.rows());
    Vector knqx(q.rows());
    for (int i = 0; i < q.rows(); ++i) knqx[i] = kernel_one(q.row(i).transpose(), x);
    if (num_points() > 0) {
      const Vector kx = kernel_vec(x);
      const Matrix kqx = kernel_cross(q, x_norm_);  // m x n
      knqx -= kqx * solve(kx);
    }
    return knqx / denom;
  }

  Vector solve(const Vector& rhs) const { return llt_.solve(rhs); }
  Matrix solve(const Matrix& rhs) const { return llt_.solve(rhs); }
  const Matrix& normalized_inputs() const { return x_norm_; }
  const Vector& alpha() const { return alpha_; }
  const Vector& standardized_observations() const { return y_std_; }

  // --- kernel batch helpers (normalized units; instrumented) ---

  double kernel_one(const Vector& a, const Vector& b) const {
    kernel_evals_.fetch_add(1, std::memory_order_relaxed);
    const double r2 = ((a - b).array() / hp_.lengthscales.array()).square().sum();
    return matern_value(r2);
  }

  Vector kernel_vec(const Vector& x) const {  // k(x_i, x) over training inputs
    const int n = num_points();
    kernel_evals_.fetch_add(static_cast<std::uint64_t>(n), std::memory_order_relaxed);
    Vector out(n);
    for (int i = 0; i < n; ++i) {
      const double r2 =
          ((x_norm_.row(i).transpose() - x).array() / hp_.lengthscales.array()).square().sum();
      out[i] = matern_value(r2);
    }
    return out;
  }

  Matrix kernel_cross(const Matrix& a, const Matrix& b) const {  // rows x rows
    kernel_evals_.fetch_add(static_cast<std::uint64_t>(a.rows()) * static_cast<std::uint64_t>(b.rows()),
                            std::memory_order_relaxed);
    // ||diff/l||^2 via the expanded square on rescaled inputs
    Matrix as = a, bs = b;
    for (int j = 0; j < dim_; ++j) {
      as.col(j) /= hp_.lengthscales[j];
      bs.col(j) /= hp_.lengthscales[j];
    }
    const Vector a2 = as.rowwise().squaredNorm();
    const Vector b2 = bs.rowwise().squaredNorm();
    Matrix r2 = (-2.0 * as * bs.transpose()).colwise() + a2;
    r2.rowwise() += b2.transpose();
    Matrix out(a.rows(), b.rows());
    constexpr double sqrt5 = 2.2360679774997896964;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) {
        const double q2 = std::max(r2(i, j), 0.0);
        const double r = std::sqrt(q2);
        out(i, j) = hp_.outputscale * (1.0 + sqrt5 * r + (5.0 / 3.0) * q2) * std::exp(-sqrt5 * r);
      }
    return out;
  }

  // d k(x_i, q) / d q for all training inputs; n x d, normalized units.
  Matrix kernel_cross_grad(const Vector& q) const {
    const int n = num_points();
    kernel_evals_.fetch_add(static_cast<std::uint64_t>(n), std::memory_order_relaxed);
    Matrix out(n, dim_);
    constexpr double sqrt5 = 2.2360679774997896964;
    for (int i = 0; i < n; ++i) {
      const Vector diff = q - x_norm_.row(i).transpose();
      const double r2 = (diff.array() / hp_.lengthscales.array()).square().sum();
      const double r = std::sqrt(r2);
      const double c = -(5.0 / 3.0) * hp_.outputscale * (1.0 + sqrt5 * r) * std::exp(-sqrt5 * r);
      out.row(i) = (c * diff.array() / hp_.lengthscales.array().square()).transpose();
    }
    return out;
  }

  double matern_value(double r2) const {
    constexpr double sqrt5 = 2.2360679774997896964;
    const double r = std::sqrt(std::max(r2, 0.0));
    return hp_.outputscale * (1.0 + sqrt5 * r + (5.0 / 3.0) * std::max(r2, 0.0)) * std::exp(-sqrt5 * r);
  }

 private:
  void factorize() {
    const int n = num_points();
    Matrix k = kernel_cross(x_norm_, x_norm_);
    // jitter escalation: 1e-8 s up to 1e-4 s
    double jit = 1e-8 * hp_.outputscale;
    for (;;) {
      Matrix a = k;
      a.diagonal().array() += hp_.noise_variance + jit;
      llt_.compute(a);
      if (llt_.info() == Eigen::Success) break;
      jit *= 10.0;
      if (jit > 1e-4 * hp_.outputscale * 1.0000001) {
        std::ostringstream msg;
        msg << "SurrogateModel: Cholesky failed after jitter escalation (n=" << n
            << ", outputscale=" << hp_.outputscale << ", noise=" << hp_.noise_variance << ")";
        throw std::runtime_error(msg.str());
      }
    }
    jitter_ = jit;
    alpha_ = llt_.solve((y_std_.array() - hp_.mean_const).matrix());
  }

  Dataset data_;
  Hyperparameters hp_;
  int dim_ = 0;
  Matrix x_norm_;
  Vector y_std_;
  double out_shift_ = 0.0, out_scale_ = 1.0;
  double jitter_ = 0.0;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
  mutable std::atomic<std::uint64_t> kernel_evals_{0};

  friend class PinnedDiscretization;
};

// Cross-covariance cache for a fixed discretization: repeated posterior and
// fantasy queries against exactly these points skip the K_{disc,X} work.
class PinnedDiscretization {
 public:
  PinnedDiscretization(const SurrogateModel& model, Matrix points_raw)
      : model_(&model), points_raw_(std::move(points_raw)) {
    pts_norm_ = model.normalize_points(points_raw_);
    const int m = static_cast<int>(pts_norm_.rows());
    const int n = model.num_points();
    prior_diag_.resize(m);
    for (int i = 0; i < m; ++i) prior_diag_[i] = model.matern_value(0.0);
    if (n > 0) {
      const Matrix k_disc_x = model.kernel_cross(pts_norm_, model.x_norm_);  // m x n
      w_ = model.solve(Matrix(k_disc_x.transpose()));                        // n x m
      mean_std_ = (k_disc_x * model.alpha_).array() + model.hp_.mean_const;
    } else {
      mean_std_ = Vector::Constant(m, model.hp_.mean_const);
    }
  }

  int size() const { return static_cast<int>(pts_norm_.rows()); }
  const Matrix& points_raw() const { return points_raw_; }
  const SurrogateModel& model() const { return *model_; }

  // Posterior mean over the pinned points, raw output units.
  Vector posterior_mean() const {
    return (mean_std_.array() * model_->out_scale_ + model_->out_shift_).matrix();
  }
  const Vector& posterior_mean_std() const { return mean_std_; }

  // lambda over the pinned points for a candidate x (raw), standardized units.
  Vector fantasy_slopes_std(const Vector& x_raw) const {
    const Vector x = model_->normalize_point(x_raw);
    const double denom = model_->predictive_sd_std(x_raw);
    const int m = size();
    if (!(denom > 0.0)) return Vector::Zero(m);
    Vector knqx(m);
    for (int i = 0; i < m; ++i) knqx[i] = model_->kernel_one(pts_norm_.row(i).transpose(), x);
    if (model_->num_points() > 0) {
      const Vector kx = model_->kernel_vec(x);
      knqx -= w_.transpose() * kx;
    }
    return knqx / denom;
  }

  // Fantasy mean over the pinned points, raw units.
  Vector fantasy_mean(const Vector& x_raw, double z) const {
    const Vector std_val = mean_std_ + z * fantasy_slopes_std(x_raw);
    return (std_val.array() * model_->out_scale_ + model_->out_shift_).matrix();
  }

  // Fantasy mean at one pinned point, addressed by its coordinates. The point
  // must match a pinned row exactly; anything else violates the cache contract.
  double fantasy_mean_at(const Vector& point_raw, const Vector& x_raw, double z) const {
    const int row = find_row(point_raw);
    if (row < 0)
      throw std::logic_error("PinnedDiscretization: query point is not part of the pinned set");
    const Vector lam = fantasy_slopes_std(x_raw);
    const double std_val = mean_std_[row] + lam[row] * z;
    return std_val * model_->out_scale_ + model_->out_shift_;
  }

  const Matrix& weights() const { return w_; }  // n x m, (K + sigma^2 I)^{-1} K_{X,disc}
  const Matrix& normalized_points() const { return pts_norm_; }

 private:
  int find_row(const Vector& point_raw) const {
    for (int i = 0; i < points_raw_.rows(); ++i)
      if ((points_raw_.row(i).transpose().array() == point_raw.array()).all()) return i;
    return -1;
  }

  const SurrogateModel* model_;
  Matrix points_raw_;
  Matrix pts_norm_;
  Vector mean_std_;
  Vector prior_diag_;
  Matrix w_;
};

inline PinnedDiscretization attach_cross_cache(const SurrogateModel& model, const Matrix& points_raw) {
  return PinnedDiscretization(model, points_raw);
}

// ---------------------------------------------------------------------------
// MAP hyperparameter fitting.
// ---------------------------------------------------------------------------

struct FitResult {
  Hyperparameters hp;
  double objective = -std::numeric_limits<double>::infinity();
  bool converged = false;
};

namespace detail {

// Log marginal likelihood of the standardized data plus log priors, with the
// gradient in log-parameter coordinates. theta = [log l_1..d, log s (, log sigma^2)].
struct MapObjective {
  const Matrix& x_norm;
  const Vector& y_std;
  const GpPriors& priors;
  bool fit_noise;
  bool fit_mean;
  double fixed_noise;
  mutable double mean_hat = 0.0;

  int dim() const { return static_cast<int>(x_norm.cols()); }
  int n_params() const { return dim() + 1 + (fit_noise ? 1 : 0); }

  double operator()(const Vector& theta, Vector* grad) const {
    const int d = dim();
    const int n = static_cast<int>(x_norm.rows());
    Vector ell = theta.head(d).array().exp();
    const double s = std::exp(theta[d]);
    const double sigma2 = fit_noise ? std::exp(theta[d + 1]) : fixed_noise;

    // pairwise scaled differences
    Matrix scaled = x_norm;
    for (int j = 0; j < d; ++j) scaled.col(j) /= ell[j];
    const Vector sq = scaled.rowwise().squaredNorm();
    Matrix r2 = (-2.0 * scaled * scaled.transpose()).colwise() + sq;
    r2.rowwise() += sq.transpose();
    r2 = r2.cwiseMax(0.0);

    constexpr double sqrt5 = 2.2360679774997896964;
    const Matrix r = r2.cwiseSqrt();
    const Matrix expr = (-sqrt5 * r).array().exp().matrix();
    Matrix k = s * ((1.0 + sqrt5 * r.array() + (5.0 / 3.0) * r2.array()) * expr.array()).matrix();

    Matrix a = k;
    a.diagonal().array() += sigma2 + 1e-8 * s;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
      if (grad) grad->setZero(n_params());
      return -1e12;  // steer the optimizer away from indefinite regions
    }

    // profiled constant mean (flat prior): mu = 1' A^-1 y / 1' A^-1 1
    double mu = 0.0;
    if (fit_mean) {
      const Vector ainv1 = llt.solve(Vector::Ones(n));
      mu = ainv1.dot(y_std) / ainv1.sum();
    }
    mean_hat = mu;

    const Vector resid = y_std.array() - mu;
    const Vector alpha = llt.solve(resid);
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    double value = -0.5 * resid.dot(alpha) - 0.5 * logdet - 0.5 * n * std::log(2.0 * M_PI);

    for (int j = 0; j < d; ++j) value += gamma_logpdf(priors.lengthscale, ell[j]);
    value += gamma_logpdf(priors.outputscale, s);
    if (fit_noise) value += gamma_logpdf(priors.noise_variance, sigma2);

    if (grad) {
      grad->resize(n_params());
      const Matrix ainv = llt.solve(Matrix::Identity(n, n));
      const Matrix m = alpha * alpha.transpose() - ainv;  // dL = 0.5 tr(M dA)

      // d k / d log l_j = (5/3) s (1 + sqrt5 r) e^{-sqrt5 r} * diff_j^2 / l_j^2
      const Matrix base = (5.0 / 3.0) * s * ((1.0 + sqrt5 * r.array()) * expr.array()).matrix();
      for (int j = 0; j < d; ++j) {
        Matrix dj = scaled.col(j).replicate(1, n);
        dj -= scaled.col(j).transpose().replicate(n, 1);
        const Matrix dk = base.cwiseProduct(dj.cwiseAbs2());
        (*grad)[j] = 0.5 * m.cwiseProduct(dk).sum() +
                     ((priors.lengthscale.concentration - 1.0) - priors.lengthscale.rate * ell[j]);
      }
      // d A / d log s = k + 1e-8 s I (the jitter scales with s)
      Matrix dks = k;
      dks.diagonal().array() += 1e-8 * s;
      (*grad)[d] = 0.5 * m.cwiseProduct(dks).sum() +
                   ((priors.outputscale.concentration - 1.0) - priors.outputscale.rate * s);
      if (fit_noise) {
        (*grad)[d + 1] = 0.5 * sigma2 * m.trace() +
                         ((priors.noise_variance.concentration - 1.0) -
                          priors.noise_variance.rate * sigma2);
      }
    }
    return value;
  }
};

}  // namespace detail

// MAP estimation over log-parameters with bound constraints and a small
// multi-start (prior modes plus seeded perturbations). Optimizer trouble is
// reported through `converged`, never thrown: the best iterate is returned.
inline FitResult fit_map(const Dataset& data, const GpPriors& priors, bool fix_noise,
                         std::uint64_t rng_seed, bool fit_mean = true) {
  data.validate();
  if (data.size() < 2) throw std::invalid_argument("fit_map: need at least 2 observations");
  const int d = data.bounds.dim();

  // standardize outputs here exactly as the model constructor will
  const double shift = data.observations.mean();
  double scale = std::sqrt((data.observations.array() - shift).square().sum() /
                           static_cast<double>(data.size() - 1));
  if (!(scale > 1e-12)) scale = 1.0;
  Vector y_std = (data.observations.array() - shift) / scale;

  Matrix x_norm(data.size(), d);
  for (int i = 0; i < data.size(); ++i)
    x_norm.row(i) =
        (data.inputs.row(i).transpose() - data.bounds.lo).cwiseQuotient(data.bounds.hi - data.bounds.lo).transpose();

  detail::MapObjective obj{x_norm, y_std, priors, !fix_noise, fit_mean, 1e-8};
  const int p = obj.n_params();

  Vector lo(p), hi(p);
  lo.head(d).setConstant(std::log(1e-3));
  hi.head(d).setConstant(std::log(1e3));
  lo[d] = std::log(1e-4);
  hi[d] = std::log(1e4);
  if (!fix_noise) {
    lo[d + 1] = std::log(1e-8);
    hi[d + 1] = std::log(1e2);
  }
  BoundedBox box(lo, hi);

  // start 0: prior modes; starts 1..3: perturbations
  Vector mode(p);
  mode.head(d).setConstant(std::log((priors.lengthscale.concentration - 1.0) / priors.lengthscale.rate));
  mode[d] = std::log((priors.outputscale.concentration - 1.0) / priors.outputscale.rate);
  if (!fix_noise)
    mode[d + 1] = std::log(std::max((priors.noise_variance.concentration - 1.0) / priors.noise_variance.rate, 1e-6));

  Rng rng(derive_seed(rng_seed, 0x6669744dULL));
  FitResult best;
  bool any_converged = false;
  auto objective = [&](const Vector& th, Vector* g) { return obj(th, g); };
  for (int start = 0; start < 4; ++start) {
    Vector x0 = mode;
    if (start > 0)
      for (int i = 0; i < p; ++i) x0[i] += 0.7 * rng.normal();
    auto res = lbfgsb_maximize(objective, x0, box, 100, 1e-6);
    any_converged = any_converged || res.converged;
    if (res.value > best.objective) {
      best.objective = res.value;
      best.hp.lengthscales = res.x.head(d).array().exp();
      best.hp.outputscale = std::exp(res.x[d]);
      best.hp.noise_variance = fix_noise ? 1e-8 : std::exp(res.x[d + 1]);
      obj(res.x, nullptr);  // refresh profiled mean at the winning parameters
      best.hp.mean_const = fit_mean ? obj.mean_hat : 0.0;
    }
  }
  best.converged = any_converged;
  return best;
}

}  // namespace tsbo
