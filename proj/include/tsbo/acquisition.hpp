#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tsbo/expected_max.hpp"
#include "tsbo/gp.hpp"
#include "tsbo/qmc.hpp"

namespace tsbo {

// One iteration's randomized discretizations and qMC sets. Regenerated fresh
// every iteration of the optimization loop.
struct AcqContext {
  Matrix x_disc;   // N_x rows in the fixed-design box
  Matrix y_disc;   // N_y rows in the adjustable box
  Matrix u_mc;     // N_u rows in the environmental space
  Vector z_base;   // N_v standard-normal base samples
  std::uint64_t seed = 0;

  int nx() const { return static_cast<int>(x_disc.rows()); }
  int ny() const { return static_cast<int>(y_disc.rows()); }
  int nu() const { return static_cast<int>(u_mc.rows()); }
  int nv() const { return static_cast<int>(z_base.size()); }
};

// Environmental sampling for a context: uniform boxes map Sobol' points
// through the box, normal marginals go through the inverse CDF.
struct EnvironmentSpec {
  bool normal = false;
  BoundedBox box;      // uniform support, or the optimization bounds for normal u
  Vector mean, sd;     // normal case only

  Matrix sample_qmc(int n, std::uint64_t seed) const {
    if (!normal) return box.from_unit(sobol(box.dim(), n, seed, true));
    Matrix z = normal_sobol(box.dim(), n, seed, true);
    for (int j = 0; j < z.cols(); ++j) z.col(j) = (mean[j] + sd[j] * z.col(j).array()).matrix();
    return z;
  }
};

inline AcqContext make_context(const BoundedBox& x_box, const BoundedBox& y_box,
                               const EnvironmentSpec& env, int n_x, int n_y, int n_u, int n_v,
                               std::uint64_t seed) {
  AcqContext ctx;
  ctx.seed = seed;
  ctx.x_disc = x_box.from_unit(latin_hypercube(x_box.dim(), n_x, derive_seed(seed, 1)));
  ctx.y_disc = y_box.from_unit(latin_hypercube(y_box.dim(), n_y, derive_seed(seed, 2)));
  ctx.u_mc = env.sample_qmc(n_u, derive_seed(seed, 3));
  Matrix z = normal_sobol(1, n_v, derive_seed(seed, 4), true);
  ctx.z_base = z.col(0);
  return ctx;
}

namespace detail {

inline Matrix cartesian_rows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) {
      out.row(i * b.rows() + j) << a.row(i), b.row(j);
    }
  return out;
}

}  // namespace detail

// Candidate-specific fantasy data against a pinned discretization: the slope
// field lambda(q) = k^n(q, x) / sqrt(k^n(x, x) + sigma^2) in standardized
// units, plus the pieces needed for d lambda / d x.
class FantasyEval {
 public:
  FantasyEval(const PinnedDiscretization& pinned, const Vector& x_raw, bool with_grad)
      : pinned_(&pinned), model_(&pinned.model()) {
    const auto& m = *model_;
    x_norm_ = m.normalize_point(x_raw);
    const int n = m.num_points();
    const int nq = pinned.size();

    kxx_ = m.matern_value(0.0);
    if (n > 0) kx_ = m.kernel_vec(x_norm_zero_based());
    double kn_xx = kxx_;
    if (n > 0) {
      ainv_kx_ = m.solve(kx_);
      kn_xx -= kx_.dot(ainv_kx_);
    }
    const double scale = m.fantasy_scale_std(kn_xx);
    collapsed_ = (scale == 0.0);
    var_ = scale * scale;
    p_ = collapsed_ ? 0.0 : 1.0 / scale;

    // k^n(q, x) over the pinned set
    knqx_.resize(nq);
    const Matrix& pts = pinned.normalized_points();
    for (int i = 0; i < nq; ++i) {
      const double r2 =
          ((pts.row(i).transpose() - x_norm_).array() / m.hyperparameters().lengthscales.array())
              .square()
              .sum();
      knqx_[i] = m.matern_value(r2);
    }
    if (n > 0) knqx_ -= pinned.weights().transpose() * kx_;
    lambda_ = p_ * knqx_;

    if (with_grad) {
      // J = d k(x_i, x)/dx (n x d), dvar = -2 J^T A^{-1} k_x
      if (n > 0) {
        j_ = m.kernel_cross_grad(x_norm_);
        dvar_ = -2.0 * j_.transpose() * ainv_kx_;
      } else {
        dvar_ = Vector::Zero(m.input_dim());
      }
      dp_ = collapsed_ ? Vector::Zero(m.input_dim()).eval() : (-0.5 * p_ * p_ * p_ * dvar_).eval();
      grad_ready_ = true;
    }
  }

  const Vector& slopes() const { return lambda_; }
  double predictive_sd() const { return std::sqrt(var_); }

  // d lambda(row) / d x in normalized coordinates.
  Vector slope_grad(int row) const {
    const auto& m = *model_;
    if (collapsed_) return Vector::Zero(m.input_dim());
    const Matrix& pts = pinned_->normalized_points();
    const Vector diff = x_norm_ - pts.row(row).transpose();
    const double r2 = (diff.array() / m.hyperparameters().lengthscales.array()).square().sum();
    const double r = std::sqrt(r2);
    constexpr double sqrt5 = 2.2360679774997896964;
    const double c = -(5.0 / 3.0) * m.hyperparameters().outputscale * (1.0 + sqrt5 * r) * std::exp(-sqrt5 * r);
    Vector dk = (c * diff.array() / m.hyperparameters().lengthscales.array().square()).matrix();
    if (m.num_points() > 0) dk -= j_.transpose() * pinned_->weights().col(row);
    return p_ * dk + knqx_[row] * dp_;
  }

 private:
  const Vector& x_norm_zero_based() const { return x_norm_; }

  const PinnedDiscretization* pinned_;
  const SurrogateModel* model_;
  Vector x_norm_;
  Vector kx_, ainv_kx_;
  Vector knqx_, lambda_;
  Matrix j_;
  Vector dvar_, dp_;
  double kxx_ = 0.0, var_ = 0.0, p_ = 0.0;
  bool grad_ready_ = false;
};

// ---------------------------------------------------------------------------
// Joint-space evaluation grid: the cartesian product X_disc x Y_disc x U_MC
// pinned against the model, with the current posterior mean and the baseline
//   max_{x'} (1/N_u) sum_u max_{y'} mu^n(x', y', u')
// computed once per context.
// ---------------------------------------------------------------------------
class JointGrid {
 public:
  // pin_weights controls whether the (K + sigma^2 I)^{-1} K_{X,disc} block is
  // prepared; only callers that evaluate fantasy slopes over the grid need it.
  JointGrid(const SurrogateModel& model, const AcqContext& ctx, bool pin_weights = true)
      : model_(&model), nx_(ctx.nx()), ny_(ctx.ny()), nu_(ctx.nu()) {
    // row layout: ((x index * N_u + u index) * N_y + y index)
    Matrix xu = detail::cartesian_rows(ctx.x_disc, ctx.u_mc);
    Matrix joint(nx_ * nu_ * ny_, model.input_dim());
    const int dx = static_cast<int>(ctx.x_disc.cols());
    const int dy = static_cast<int>(ctx.y_disc.cols());
    const int du = static_cast<int>(ctx.u_mc.cols());
    for (int a = 0; a < nx_ * nu_; ++a)
      for (int y = 0; y < ny_; ++y) {
        joint.row(a * ny_ + y).segment(0, dx) = xu.row(a).segment(0, dx);
        joint.row(a * ny_ + y).segment(dx, dy) = ctx.y_disc.row(y);
        joint.row(a * ny_ + y).segment(dx + dy, du) = xu.row(a).segment(dx, du);
      }
    if (pin_weights) {
      pinned_ = std::make_unique<PinnedDiscretization>(model, std::move(joint));
      mean_std_ = pinned_->posterior_mean_std();
    } else {
      const Matrix q = model.normalize_points(joint);
      mean_std_ = Vector::Constant(joint.rows(), model.hyperparameters().mean_const);
      if (model.num_points() > 0)
        mean_std_ += model.kernel_cross(q, model.normalized_inputs()) * model.alpha();
    }

    // baseline and its maximizer
    baseline_per_x_.resize(nx_);
    for (int xi = 0; xi < nx_; ++xi) {
      double acc = 0.0;
      for (int ui = 0; ui < nu_; ++ui) {
        const int base = (xi * nu_ + ui) * ny_;
        double best = mean_std_[base];
        for (int yi = 1; yi < ny_; ++yi) best = std::max(best, mean_std_[base + yi]);
        acc += best;
      }
      baseline_per_x_[xi] = acc / nu_;
    }
    baseline_x_ = 0;
    for (int xi = 1; xi < nx_; ++xi)
      if (baseline_per_x_[xi] > baseline_per_x_[baseline_x_]) baseline_x_ = xi;
  }

  const PinnedDiscretization& pinned() const { return *pinned_; }
  int index(int xi, int ui, int yi) const { return (xi * nu_ + ui) * ny_ + yi; }
  const Vector& mean_std() const { return mean_std_; }
  double baseline_std() const { return baseline_per_x_[baseline_x_]; }
  int baseline_x_index() const { return baseline_x_; }
  const Vector& baseline_per_x() const { return baseline_per_x_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nu() const { return nu_; }

  // argmax_y mu^n(x_xi, y, u_ui) over Y_disc, lowest index on ties
  int best_y(int xi, int ui) const {
    const int base = (xi * nu_ + ui) * ny_;
    int best = 0;
    for (int yi = 1; yi < ny_; ++yi)
      if (mean_std_[base + yi] > mean_std_[base + best]) best = yi;
    return best;
  }

 private:
  const SurrogateModel* model_;
  int nx_, ny_, nu_;
  std::unique_ptr<PinnedDiscretization> pinned_;
  Vector mean_std_;
  Vector baseline_per_x_;
  int baseline_x_ = 0;
};

// Current value of the discretized decision problem,
//   max over X_disc of (1/N_u) sum_u max over Y_disc of mu^n,
// with the maximizing fixed-design point. Raw output units.
inline std::pair<Vector, double> inner_value(const SurrogateModel& model, const Matrix& x_disc,
                                             const Matrix& y_disc, const Matrix& u_mc) {
  if (x_disc.rows() == 0 || y_disc.rows() == 0 || u_mc.rows() == 0)
    throw std::invalid_argument("inner_value: discretizations must be nonempty");
  AcqContext ctx;
  ctx.x_disc = x_disc;
  ctx.y_disc = y_disc;
  ctx.u_mc = u_mc;
  JointGrid grid(model, ctx, /*pin_weights=*/false);
  const double raw =
      grid.baseline_std() * model.output_scale() + model.output_shift();
  return {x_disc.row(grid.baseline_x_index()).transpose(), raw};
}

// ---------------------------------------------------------------------------
// Joint knowledge gradient (qMC over base samples):
//   (1/N_v) sum_z max_{x'} (1/N_u) sum_{u'} max_{y'} mu^{n+1}(x',y',u'; x, v(x,z))
//   minus the same expression under mu^n. Standardized units internally,
//   raw units returned.
// ---------------------------------------------------------------------------
class JointKg {
 public:
  JointKg(const SurrogateModel& model, const AcqContext& ctx)
      : model_(&model), ctx_(&ctx), grid_(model, ctx) {}

  double value(const Vector& x_raw) const { return eval(x_raw, nullptr); }

  double value_and_grad(const Vector& x_raw, Vector& grad) const { return eval(x_raw, &grad); }

  const JointGrid& grid() const { return grid_; }

 private:
  double eval(const Vector& x_raw, Vector* grad) const {
    const int nx = grid_.nx(), ny = grid_.ny(), nu = grid_.nu();
    const int nv = ctx_->nv();
    FantasyEval fant(grid_.pinned(), x_raw, grad != nullptr);
    const Vector& lam = fant.slopes();
    const Vector& mu = grid_.mean_std();
    const Vector& z = ctx_->z_base;

    // For each z: max over x' of (1/N_u) sum_u max over y of (mu + lam z).
    // Track the argmax indices for the gradient.
    double acc = 0.0;
    std::vector<int> sel_y(grad ? static_cast<std::size_t>(nv) * nu : 0);
    std::vector<int> sel_x(grad ? nv : 0);
    Vector per_x(nx);
    for (int vi = 0; vi < nv; ++vi) {
      const double zv = z[vi];
      int best_x = 0;
      for (int xi = 0; xi < nx; ++xi) {
        double sum_u = 0.0;
        for (int ui = 0; ui < nu; ++ui) {
          const int base = (xi * nu + ui) * ny;
          double best = mu[base] + lam[base] * zv;
          for (int yi = 1; yi < ny; ++yi) {
            const double cand = mu[base + yi] + lam[base + yi] * zv;
            if (cand > best) best = cand;
          }
          sum_u += best;
        }
        per_x[xi] = sum_u / nu;
        if (per_x[xi] > per_x[best_x]) best_x = xi;
      }
      acc += per_x[best_x];
      if (grad) {
        sel_x[static_cast<std::size_t>(vi)] = best_x;
        for (int ui = 0; ui < nu; ++ui) {
          const int base = (best_x * nu + ui) * ny;
          int by = 0;
          for (int yi = 1; yi < ny; ++yi)
            if (mu[base + yi] + lam[base + yi] * zv > mu[base + by] + lam[base + by] * zv) by = yi;
          sel_y[static_cast<std::size_t>(vi) * nu + ui] = by;
        }
      }
    }
    const double value_std = acc / nv - grid_.baseline_std();

    if (grad) {
      // d value / d x = (1/(N_v N_u)) sum_z z sum_u d lambda(selected)/dx
      Vector g = Vector::Zero(model_->input_dim());
      for (int vi = 0; vi < nv; ++vi) {
        const double zv = z[vi];
        if (zv == 0.0) continue;
        Vector inner = Vector::Zero(model_->input_dim());
        for (int ui = 0; ui < nu; ++ui) {
          const int row = (sel_x[static_cast<std::size_t>(vi)] * nu + ui) * ny +
                          sel_y[static_cast<std::size_t>(vi) * nu + ui];
          inner += fant.slope_grad(row);
        }
        g += zv * inner;
      }
      g /= static_cast<double>(nv) * static_cast<double>(nu);
      // to raw input units, raw output units
      *grad = model_->output_scale() *
              g.cwiseQuotient(model_->dataset().bounds.hi - model_->dataset().bounds.lo);
    }
    return value_std * model_->output_scale();
  }

  const SurrogateModel* model_;
  const AcqContext* ctx_;
  JointGrid grid_;
};

// ---------------------------------------------------------------------------
// Alternating KG, fixed-design flavor. The incumbent policy g is frozen at
// the discrete maximizers of the current posterior mean; one affine function
// of the next observation per x' in X_disc; the expectation is exact.
// ---------------------------------------------------------------------------
class AlternatingKgFixed {
 public:
  AlternatingKgFixed(const SurrogateModel& model, const AcqContext& ctx)
      : model_(&model), nx_(ctx.nx()), nu_(ctx.nu()) {
    JointGrid grid(model, ctx, /*pin_weights=*/false);
    const int xhat = grid.baseline_x_index();

    // rows (x', g(u'), u') for all x' in X_disc, u' in U_MC
    Matrix pts(nx_ * nu_, model.input_dim());
    const int dx = static_cast<int>(ctx.x_disc.cols());
    const int dy = static_cast<int>(ctx.y_disc.cols());
    const int du = static_cast<int>(ctx.u_mc.cols());
    for (int ui = 0; ui < nu_; ++ui) {
      const int gy = grid.best_y(xhat, ui);
      for (int xi = 0; xi < nx_; ++xi) {
        pts.row(xi * nu_ + ui).segment(0, dx) = ctx.x_disc.row(xi);
        pts.row(xi * nu_ + ui).segment(dx, dy) = ctx.y_disc.row(gy);
        pts.row(xi * nu_ + ui).segment(dx + dy, du) = ctx.u_mc.row(ui);
      }
    }
    pinned_ = std::make_unique<PinnedDiscretization>(model, std::move(pts));
    mean_std_ = pinned_->posterior_mean_std();
  }

  double value(const Vector& x_raw) const { return eval(x_raw, nullptr); }
  double value_and_grad(const Vector& x_raw, Vector& grad) const { return eval(x_raw, &grad); }

 private:
  double eval(const Vector& x_raw, Vector* grad) const {
    FantasyEval fant(*pinned_, x_raw, grad != nullptr);
    const Vector& lam = fant.slopes();

    AffineFamily fam;
    fam.intercepts.resize(static_cast<std::size_t>(nx_));
    fam.slopes.resize(static_cast<std::size_t>(nx_));
    for (int xi = 0; xi < nx_; ++xi) {
      double a = 0.0, b = 0.0;
      for (int ui = 0; ui < nu_; ++ui) {
        a += mean_std_[xi * nu_ + ui];
        b += lam[xi * nu_ + ui];
      }
      fam.intercepts[static_cast<std::size_t>(xi)] = a / nu_;
      fam.slopes[static_cast<std::size_t>(xi)] = b / nu_;
    }
    const auto em = expected_max_affine_with_grad(fam);
    double best_a = fam.intercepts[0];
    for (double a : fam.intercepts) best_a = std::max(best_a, a);
    const double value_std = em.value - best_a;

    if (grad) {
      Vector g = Vector::Zero(model_->input_dim());
      for (int xi = 0; xi < nx_; ++xi) {
        const double w = em.d_slope[static_cast<std::size_t>(xi)];
        if (w == 0.0) continue;
        Vector db = Vector::Zero(model_->input_dim());
        for (int ui = 0; ui < nu_; ++ui) db += fant.slope_grad(xi * nu_ + ui);
        g += w * db / nu_;
      }
      *grad = model_->output_scale() *
              g.cwiseQuotient(model_->dataset().bounds.hi - model_->dataset().bounds.lo);
    }
    return value_std * model_->output_scale();
  }

  const SurrogateModel* model_;
  int nx_, nu_;
  std::unique_ptr<PinnedDiscretization> pinned_;
  Vector mean_std_;
};

// ---------------------------------------------------------------------------
// Alternating KG, adjustable flavor. The fixed design is frozen at the
// discrete incumbent; one affine family per u' over Y_disc; exact expectation
// averaged over U_MC.
// ---------------------------------------------------------------------------
class AlternatingKgAdjustable {
 public:
  AlternatingKgAdjustable(const SurrogateModel& model, const AcqContext& ctx)
      : model_(&model), ny_(ctx.ny()), nu_(ctx.nu()) {
    JointGrid grid(model, ctx, /*pin_weights=*/false);
    const int xhat = grid.baseline_x_index();

    Matrix pts(nu_ * ny_, model.input_dim());
    const int dx = static_cast<int>(ctx.x_disc.cols());
    const int dy = static_cast<int>(ctx.y_disc.cols());
    const int du = static_cast<int>(ctx.u_mc.cols());
    for (int ui = 0; ui < nu_; ++ui)
      for (int yi = 0; yi < ny_; ++yi) {
        pts.row(ui * ny_ + yi).segment(0, dx) = ctx.x_disc.row(xhat);
        pts.row(ui * ny_ + yi).segment(dx, dy) = ctx.y_disc.row(yi);
        pts.row(ui * ny_ + yi).segment(dx + dy, du) = ctx.u_mc.row(ui);
      }
    pinned_ = std::make_unique<PinnedDiscretization>(model, std::move(pts));
    mean_std_ = pinned_->posterior_mean_std();
  }

  double value(const Vector& x_raw) const { return eval(x_raw, nullptr); }
  double value_and_grad(const Vector& x_raw, Vector& grad) const { return eval(x_raw, &grad); }

 private:
  double eval(const Vector& x_raw, Vector* grad) const {
    FantasyEval fant(*pinned_, x_raw, grad != nullptr);
    const Vector& lam = fant.slopes();

    double acc = 0.0;
    Vector g = grad ? Vector::Zero(model_->input_dim()) : Vector();
    AffineFamily fam;
    fam.intercepts.resize(static_cast<std::size_t>(ny_));
    fam.slopes.resize(static_cast<std::size_t>(ny_));
    for (int ui = 0; ui < nu_; ++ui) {
      double best_a = -std::numeric_limits<double>::infinity();
      for (int yi = 0; yi < ny_; ++yi) {
        fam.intercepts[static_cast<std::size_t>(yi)] = mean_std_[ui * ny_ + yi];
        fam.slopes[static_cast<std::size_t>(yi)] = lam[ui * ny_ + yi];
        best_a = std::max(best_a, fam.intercepts[static_cast<std::size_t>(yi)]);
      }
      const auto em = expected_max_affine_with_grad(fam);
      acc += em.value - best_a;
      if (grad) {
        for (int yi = 0; yi < ny_; ++yi) {
          const double w = em.d_slope[static_cast<std::size_t>(yi)];
          if (w != 0.0) g += w * fant.slope_grad(ui * ny_ + yi);
        }
      }
    }
    if (grad)
      *grad = model_->output_scale() * (g / nu_).cwiseQuotient(model_->dataset().bounds.hi -
                                                               model_->dataset().bounds.lo);
    return (acc / nu_) * model_->output_scale();
  }

  const SurrogateModel* model_;
  int ny_, nu_;
  std::unique_ptr<PinnedDiscretization> pinned_;
  Vector mean_std_;
};

// ---------------------------------------------------------------------------
// Two-step KGs on restricted models. Stage one works on a (y, u) model: one
// affine family per u' over Y_disc (multi-task form). Stage two works on an
// (x, u) model: a single family over X_disc with U_MC-averaged coefficients
// (robust form).
// ---------------------------------------------------------------------------
class TwoStepKgStage1 {
 public:
  TwoStepKgStage1(const SurrogateModel& model_yu, const Matrix& y_disc, const Matrix& u_mc)
      : model_(&model_yu), ny_(static_cast<int>(y_disc.rows())), nu_(static_cast<int>(u_mc.rows())) {
    // model input layout is (y, u); rows ordered u-major to mirror the stage-two grid
    Matrix ordered(nu_ * ny_, model_yu.input_dim());
    const int dy = static_cast<int>(y_disc.cols());
    const int du = static_cast<int>(u_mc.cols());
    for (int ui = 0; ui < nu_; ++ui)
      for (int yi = 0; yi < ny_; ++yi) {
        ordered.row(ui * ny_ + yi).segment(0, dy) = y_disc.row(yi);
        ordered.row(ui * ny_ + yi).segment(dy, du) = u_mc.row(ui);
      }
    pinned_ = std::make_unique<PinnedDiscretization>(model_yu, std::move(ordered));
    mean_std_ = pinned_->posterior_mean_std();
  }

  double value(const Vector& yu_raw) const { return eval(yu_raw, nullptr); }
  double value_and_grad(const Vector& yu_raw, Vector& grad) const { return eval(yu_raw, &grad); }

 private:
  double eval(const Vector& yu_raw, Vector* grad) const {
    FantasyEval fant(*pinned_, yu_raw, grad != nullptr);
    const Vector& lam = fant.slopes();
    double acc = 0.0;
    Vector g = grad ? Vector::Zero(model_->input_dim()) : Vector();
    AffineFamily fam;
    fam.intercepts.resize(static_cast<std::size_t>(ny_));
    fam.slopes.resize(static_cast<std::size_t>(ny_));
    for (int ui = 0; ui < nu_; ++ui) {
      double best_a = -std::numeric_limits<double>::infinity();
      for (int yi = 0; yi < ny_; ++yi) {
        fam.intercepts[static_cast<std::size_t>(yi)] = mean_std_[ui * ny_ + yi];
        fam.slopes[static_cast<std::size_t>(yi)] = lam[ui * ny_ + yi];
        best_a = std::max(best_a, fam.intercepts[static_cast<std::size_t>(yi)]);
      }
      const auto em = expected_max_affine_with_grad(fam);
      acc += em.value - best_a;
      if (grad)
        for (int yi = 0; yi < ny_; ++yi) {
          const double w = em.d_slope[static_cast<std::size_t>(yi)];
          if (w != 0.0) g += w * fant.slope_grad(ui * ny_ + yi);
        }
    }
    if (grad)
      *grad = model_->output_scale() * (g / nu_).cwiseQuotient(model_->dataset().bounds.hi -
                                                               model_->dataset().bounds.lo);
    return (acc / nu_) * model_->output_scale();
  }

  const SurrogateModel* model_;
  int ny_, nu_;
  std::unique_ptr<PinnedDiscretization> pinned_;
  Vector mean_std_;
};

class TwoStepKgStage2 {
 public:
  TwoStepKgStage2(const SurrogateModel& model_xu, const Matrix& x_disc, const Matrix& u_mc)
      : model_(&model_xu), nx_(static_cast<int>(x_disc.rows())), nu_(static_cast<int>(u_mc.rows())) {
    Matrix pts(nx_ * nu_, model_xu.input_dim());
    const int dx = static_cast<int>(x_disc.cols());
    const int du = static_cast<int>(u_mc.cols());
    for (int xi = 0; xi < nx_; ++xi)
      for (int ui = 0; ui < nu_; ++ui) {
        pts.row(xi * nu_ + ui).segment(0, dx) = x_disc.row(xi);
        pts.row(xi * nu_ + ui).segment(dx, du) = u_mc.row(ui);
      }
    pinned_ = std::make_unique<PinnedDiscretization>(model_xu, std::move(pts));
    mean_std_ = pinned_->posterior_mean_std();
  }

  double value(const Vector& xu_raw) const { return eval(xu_raw, nullptr); }
  double value_and_grad(const Vector& xu_raw, Vector& grad) const { return eval(xu_raw, &grad); }

 private:
  double eval(const Vector& xu_raw, Vector* grad) const {
    FantasyEval fant(*pinned_, xu_raw, grad != nullptr);
    const Vector& lam = fant.slopes();
    AffineFamily fam;
    fam.intercepts.resize(static_cast<std::size_t>(nx_));
    fam.slopes.resize(static_cast<std::size_t>(nx_));
    for (int xi = 0; xi < nx_; ++xi) {
      double a = 0.0, b = 0.0;
      for (int ui = 0; ui < nu_; ++ui) {
        a += mean_std_[xi * nu_ + ui];
        b += lam[xi * nu_ + ui];
      }
      fam.intercepts[static_cast<std::size_t>(xi)] = a / nu_;
      fam.slopes[static_cast<std::size_t>(xi)] = b / nu_;
    }
    const auto em = expected_max_affine_with_grad(fam);
    double best_a = fam.intercepts[0];
    for (double a : fam.intercepts) best_a = std::max(best_a, a);

    if (grad) {
      Vector g = Vector::Zero(model_->input_dim());
      for (int xi = 0; xi < nx_; ++xi) {
        const double w = em.d_slope[static_cast<std::size_t>(xi)];
        if (w == 0.0) continue;
        Vector db = Vector::Zero(model_->input_dim());
        for (int ui = 0; ui < nu_; ++ui) db += fant.slope_grad(xi * nu_ + ui);
        g += w * db / nu_;
      }
      *grad = model_->output_scale() *
              g.cwiseQuotient(model_->dataset().bounds.hi - model_->dataset().bounds.lo);
    }
    return (em.value - best_a) * model_->output_scale();
  }

  const SurrogateModel* model_;
  int nx_, nu_;
  std::unique_ptr<PinnedDiscretization> pinned_;
  Vector mean_std_;
};

// Convenience wrappers matching the per-point call signatures used by tests
// and the optimizer layer.
inline double acq_joint_kg(const SurrogateModel& model, const Vector& x_raw, const AcqContext& ctx) {
  return JointKg(model, ctx).value(x_raw);
}

inline double acq_alt_fix(const SurrogateModel& model, const Vector& x_raw, const AcqContext& ctx) {
  return AlternatingKgFixed(model, ctx).value(x_raw);
}

inline double acq_alt_adj(const SurrogateModel& model, const Vector& x_raw, const AcqContext& ctx) {
  return AlternatingKgAdjustable(model, ctx).value(x_raw);
}

}  // namespace tsbo
