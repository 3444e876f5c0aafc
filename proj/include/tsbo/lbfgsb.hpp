#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>

#include "tsbo/qmc.hpp"

namespace tsbo {

struct BoundedBox {
  Vector lo, hi;

  BoundedBox() = default;
  BoundedBox(Vector l, Vector h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("BoundedBox: size mismatch");
    for (int i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw std::invalid_argument("BoundedBox: need lo < hi per dimension");
  }

  int dim() const { return static_cast<int>(lo.size()); }
  Vector clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
  Vector center() const { return 0.5 * (lo + hi); }

  // maps rows of a [0,1)^d sample into the box
  Matrix from_unit(const Matrix& u) const {
    Matrix out(u.rows(), u.cols());
    for (int j = 0; j < u.cols(); ++j) out.col(j) = lo[j] + (hi[j] - lo[j]) * u.col(j).array();
    return out;
  }

  static BoundedBox unit(int d) { return {Vector::Zero(d), Vector::Ones(d)}; }

  BoundedBox concat(const BoundedBox& other) const {
    Vector l(dim() + other.dim()), h(dim() + other.dim());
    l << lo, other.lo;
    h << hi, other.hi;
    return {l, h};
  }
};

// Objective callback. Fills *grad when non-null and returns the value.
using ObjectiveWithGradient = std::function<double(const Vector&, Vector*)>;

struct AscentResult {
  Vector x;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

// Bounded maximization by limited-memory quasi-Newton ascent: two-loop
// recursion over curvature pairs, box handling by projection of iterates and
// search path, strong Wolfe line search along t -> P(x + t d), termination on
// the infinity norm of the projected gradient.
inline AscentResult lbfgsb_maximize(const ObjectiveWithGradient& f, const Vector& x0,
                                    const BoundedBox& box, int max_iters = 200,
                                    double tol = 1e-8, int memory = 10) {
  const int d = box.dim();
  AscentResult res;
  res.x = box.clamp(x0);

  Vector g(d);
  double fx = f(res.x, &g);
  ++res.evaluations;
  res.value = fx;
  Vector x = res.x;

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto projected_grad_norm = [&](const Vector& xc, const Vector& gc) {
    // ascent: the natural step is +g
    return (box.clamp(xc + gc) - xc).lpNorm<Eigen::Infinity>();
  };

  for (int iter = 0; iter < max_iters; ++iter) {
    res.iterations = iter;
    if (projected_grad_norm(x, g) <= tol) {
      res.converged = true;
      break;
    }

    // two-loop recursion on the ascent direction
    Vector q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = q;

    // keep the direction feasible at active bounds and uphill
    for (int i = 0; i < d; ++i) {
      if ((x[i] <= box.lo[i] && dir[i] < 0.0) || (x[i] >= box.hi[i] && dir[i] > 0.0)) dir[i] = 0.0;
    }
    double dg = dir.dot(g);
    if (!(dg > 1e-14 * dir.norm() * g.norm()) || !dir.allFinite()) {
      dir = g;
      for (int i = 0; i < d; ++i)
        if ((x[i] <= box.lo[i] && dir[i] < 0.0) || (x[i] >= box.hi[i] && dir[i] > 0.0)) dir[i] = 0.0;
      dg = dir.dot(g);
      if (dg <= 0.0) break;  // no feasible ascent direction
    }

    // strong Wolfe search along the projection arc
    const double c1 = 1e-4, c2 = 0.9;
    auto phi = [&](double t, Vector& xt, Vector& gt) {
      xt = box.clamp(x + t * dir);
      const double v = f(xt, &gt);
      ++res.evaluations;
      return v;
    };
    auto dphi = [&](double t, const Vector& xt, const Vector& gt) {
      // derivative along the arc: clamped coordinates contribute nothing
      double dd = 0.0;
      for (int i = 0; i < d; ++i) {
        const double raw = x[i] + t * dir[i];
        if (raw > box.lo[i] && raw < box.hi[i]) dd += gt[i] * dir[i];
      }
      return dd;
    };

    const double phi0 = fx, dphi0 = dg;
    double t_prev = 0.0, phi_prev = phi0;
    double t = (iter == 0) ? std::min(1.0, 1.0 / std::max(1e-12, dir.lpNorm<Eigen::Infinity>())) : 1.0;
    Vector xt(d), gt(d), x_lo_v(d), g_lo_v(d);
    double t_lo = 0.0, t_hi = 0.0, phi_lo = phi0;
    bool bracketed = false, accepted = false;
    Vector x_acc(d), g_acc(d);
    double phi_acc = phi0;

    for (int ls = 0; ls < 12 && !bracketed && !accepted; ++ls) {
      const double ft = phi(t, xt, gt);
      if (ft < phi0 + c1 * t * dphi0 || (ls > 0 && ft <= phi_prev)) {
        t_lo = t_prev;
        phi_lo = phi_prev;
        t_hi = t;
        bracketed = true;
        break;
      }
      const double dt = dphi(t, xt, gt);
      if (std::abs(dt) <= c2 * dphi0) {
        accepted = true;
        x_acc = xt;
        g_acc = gt;
        phi_acc = ft;
        break;
      }
      if (dt < 0.0) {
        t_lo = t_prev;
        phi_lo = phi_prev;
        t_hi = t;
        bracketed = true;
        break;
      }
      t_prev = t;
      phi_prev = ft;
      t *= 2.0;
    }

    if (bracketed) {
      for (int z = 0; z < 20 && !accepted; ++z) {
        t = 0.5 * (t_lo + t_hi);
        const double ft = phi(t, xt, gt);
        if (ft < phi0 + c1 * t * dphi0 || ft <= phi_lo) {
          t_hi = t;
        } else {
          const double dt = dphi(t, xt, gt);
          if (std::abs(dt) <= c2 * dphi0) {
            accepted = true;
            x_acc = xt;
            g_acc = gt;
            phi_acc = ft;
            break;
          }
          if (dt * (t_hi - t_lo) <= 0.0) t_hi = t_lo;
          t_lo = t;
          phi_lo = ft;
        }
        if (t_hi - t_lo < 1e-16) break;
      }
      if (!accepted && phi_lo > phi0 && t_lo > 0.0) {
        // fall back to the best Armijo point found
        accepted = true;
        phi_acc = phi(t_lo, x_acc, g_acc);
      }
    }

    if (!accepted || !(phi_acc > fx)) break;  // line search failed to improve

    Vector s = x_acc - x;
    Vector yv = g_acc - g;
    // curvature condition for ascent pairs (mirrors descent on -f)
    if (-s.dot(yv) > 1e-10 * s.norm() * yv.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(-yv);
      rho_hist.push_back(1.0 / s_hist.back().dot(y_hist.back()));
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_acc;
    g = g_acc;
    fx = phi_acc;
    if (fx > res.value) {
      res.value = fx;
      res.x = x;
    }
  }

  if (fx > res.value) {
    res.value = fx;
    res.x = x;
  }
  return res;
}

}  // namespace tsbo
