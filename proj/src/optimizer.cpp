#include "bss/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace bss::opt {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;
constexpr int kMaxLineSearchSteps = 60;

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0;
  Vector grad;
};

class LineSearch {
 public:
  LineSearch(const Objective& f, const Vector& x, const Vector& dir, double f0, double slope0)
      : f_(f), x_(x), dir_(dir), f0_(f0), slope0_(slope0) {}

  /// Returns a point satisfying the strong Wolfe conditions, or the
  /// approximate Wolfe conditions once rounding hides the decrease.
  std::optional<LinePoint> run(double alpha_init) {
    LinePoint prev{0.0, f0_, slope0_, {}};
    double alpha = alpha_init;
    for (int i = 0; i < kMaxLineSearchSteps; ++i) {
      LinePoint cur = eval(alpha);
      if (!std::isfinite(cur.f)) {
        alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
        continue;
      }
      if (acceptable(cur)) return cur;
      if (cur.f > f0_ + kArmijo * alpha * slope0_ || (i > 0 && cur.f >= prev.f)) {
        return zoom(prev, cur);
      }
      if (cur.slope >= 0.0) {
        return zoom(cur, prev);
      }
      prev = cur;
      alpha *= 2.0;
    }
    return std::nullopt;
  }

 private:
  LinePoint eval(double alpha) {
    LinePoint pt;
    pt.alpha = alpha;
    pt.grad.resize(x_.size());
    const Vector trial = x_ + alpha * dir_;
    pt.f = f_(trial, pt.grad);
    pt.slope = std::isfinite(pt.f) ? pt.grad.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
    return pt;
  }

  bool acceptable(const LinePoint& pt) const {
    const bool wolfe = pt.f <= f0_ + kArmijo * pt.alpha * slope0_ &&
                       std::abs(pt.slope) <= -kCurvature * slope0_;
    const double eps = 1e-14 * std::max(1.0, std::abs(f0_));
    const bool approx = pt.f <= f0_ + eps && pt.slope >= kCurvature * slope0_ &&
                        pt.slope <= (2.0 * kArmijo - 1.0) * slope0_;
    return wolfe || approx;
  }

  std::optional<LinePoint> zoom(LinePoint lo, LinePoint hi) {
    for (int i = 0; i < kMaxLineSearchSteps; ++i) {
      const double width = hi.alpha - lo.alpha;
      double alpha = lo.alpha + 0.5 * width;
      if (std::isfinite(hi.f)) {
        // Minimizer of the quadratic through (lo.f, lo.slope) and hi.f.
        const double denom = 2.0 * (hi.f - lo.f - lo.slope * width);
        if (denom > 0.0) {
          alpha = lo.alpha - lo.slope * width * width / denom;
        }
      }
      const double a = std::min(lo.alpha, hi.alpha);
      const double b = std::max(lo.alpha, hi.alpha);
      alpha = std::clamp(alpha, a + 0.1 * (b - a), b - 0.1 * (b - a));

      LinePoint cur = eval(alpha);
      if (!std::isfinite(cur.f)) {
        hi = cur;
        continue;
      }
      if (acceptable(cur)) return cur;
      if (cur.f > f0_ + kArmijo * alpha * slope0_ || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) {
          hi = lo;
        }
        lo = cur;
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
    }
    if (lo.alpha > 0.0 && lo.f < f0_) return lo;
    return std::nullopt;
  }

  const Objective& f_;
  const Vector& x_;
  const Vector& dir_;
  double f0_;
  double slope0_;
};

}  // namespace

BfgsResult minimize_bfgs(const Objective& f, Vector x0, const BfgsOptions& options,
                         const Matrix* h0) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.f = f(res.x, res.gradient);
  if (!std::isfinite(res.f)) {
    res.message = "objective is not finite at the starting point";
    return res;
  }
  bool fresh = true;
  if (h0 != nullptr && h0->rows() == n && h0->cols() == n) {
    res.inverse_hessian = *h0;
    fresh = false;
  } else {
    res.inverse_hessian = Matrix::Identity(n, n);
  }

  bool restarted = false;
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    if (res.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Vector dir = -res.inverse_hessian * res.gradient;
    double slope = res.gradient.dot(dir);
    if (!(slope < 0.0)) {
      res.inverse_hessian.setIdentity();
      fresh = true;
      dir = -res.gradient;
      slope = res.gradient.dot(dir);
    }
    // Unit steps are natural once curvature is known; the first steepest
    // descent step is capped so it cannot leave the domain by a wide margin.
    const double alpha0 = fresh ? std::min(1.0, 0.1 / dir.lpNorm<Eigen::Infinity>()) : 1.0;

    LineSearch search(f, res.x, dir, res.f, slope);
    auto pt = search.run(alpha0);
    if (!pt) {
      if (!restarted) {
        restarted = true;
        res.inverse_hessian.setIdentity();
        fresh = true;
        continue;
      }
      res.message = "line search failed";
      return res;
    }
    restarted = false;

    const Vector s = pt->alpha * dir;
    const Vector y = pt->grad - res.gradient;
    res.x += s;
    res.f = pt->f;
    res.gradient = pt->grad;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        res.inverse_hessian *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Vector hy = res.inverse_hessian * y;
      const double yhy = y.dot(hy);
      res.inverse_hessian += ((1.0 + rho * yhy) * rho) * (s * s.transpose()) -
                             rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  res.message = "iteration limit reached";
  return res;
}

AugmentedLagrangianResult minimize_augmented_lagrangian(const Objective& f,
                                                        const EqualityConstraints& constraints,
                                                        Vector x0,
                                                        const AugmentedLagrangianOptions& options) {
  AugmentedLagrangianResult res;
  const Eigen::Index m = constraints.count;

  if (m == 0) {
    BfgsOptions bo{options.max_inner_iterations, options.gradient_tolerance};
    auto inner = minimize_bfgs(f, std::move(x0), bo);
    res.x = std::move(inner.x);
    res.f = inner.f;
    res.constraint_values = Vector(0);
    res.multipliers = Vector(0);
    res.lagrangian_gradient_norm = inner.gradient.lpNorm<Eigen::Infinity>();
    res.outer_iterations = 1;
    res.inner_iterations = inner.iterations;
    res.converged = inner.converged;
    res.message = inner.message;
    return res;
  }

  Vector lambda = Vector::Zero(m);
  double mu = options.initial_penalty;
  Vector x = std::move(x0);
  Matrix h;
  bool have_h = false;
  double previous_violation = std::numeric_limits<double>::infinity();
  std::string last_message;

  for (int outer = 0; outer < options.max_outer_iterations; ++outer) {
    res.outer_iterations = outer + 1;
    const Vector mult = lambda;
    const double pen = mu;
    Objective merit = [&](const Vector& z, Vector& grad) {
      const double fz = f(z, grad);
      if (!std::isfinite(fz)) return fz;
      const Vector c = constraints.values(z);
      const Vector shifted = pen * c - mult;
      grad += constraints.jacobian(z).transpose() * shifted;
      return fz - mult.dot(c) + 0.5 * pen * c.squaredNorm();
    };

    const double inner_tol =
        std::max(0.5 * options.gradient_tolerance, 1e-2 * std::pow(0.1, outer));
    BfgsOptions bo{options.max_inner_iterations, inner_tol};
    auto inner = minimize_bfgs(merit, x, bo, have_h ? &h : nullptr);
    res.inner_iterations += inner.iterations;
    last_message = inner.message;
    x = inner.x;
    h = inner.inverse_hessian;
    have_h = true;

    const Vector c = constraints.values(x);
    lambda -= mu * c;
    const double violation = c.lpNorm<Eigen::Infinity>();
    // After the multiplier update the merit gradient equals ∇f − J'λ.
    res.lagrangian_gradient_norm = inner.gradient.lpNorm<Eigen::Infinity>();

    if (violation < options.feasibility_tolerance &&
        res.lagrangian_gradient_norm < options.gradient_tolerance) {
      res.converged = true;
      break;
    }
    if (violation > 0.25 * previous_violation && mu < options.max_penalty) {
      mu *= options.penalty_growth;
      have_h = false;
    }
    previous_violation = violation;
  }

  res.x = x;
  Vector g(x.size());
  res.f = f(x, g);
  res.constraint_values = constraints.values(x);
  res.multipliers = lambda;
  res.lagrangian_gradient_norm = (g - constraints.jacobian(x).transpose() * lambda).lpNorm<Eigen::Infinity>();
  res.converged = res.converged && res.lagrangian_gradient_norm < options.gradient_tolerance;
  res.message = res.converged ? "converged" : "not converged: " + last_message;
  return res;
}

}  // namespace bss::opt
