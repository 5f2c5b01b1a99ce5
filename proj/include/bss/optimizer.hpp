#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace bss::opt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Returns f(x) and writes ∇f(x) into `grad`. Points outside the domain must
/// return +inf; the line search then backs off.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct BfgsOptions {
  int max_iterations = 5000;
  double gradient_tolerance = 1e-8;  // on the ∞-norm
};

struct BfgsResult {
  Vector x;
  double f = 0.0;
  Vector gradient;
  Matrix inverse_hessian;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Dense BFGS with a strong-Wolfe line search. `h0` warm-starts the inverse
/// Hessian approximation when its size matches.
BfgsResult minimize_bfgs(const Objective& f, Vector x0, const BfgsOptions& options,
                         const Matrix* h0 = nullptr);

struct EqualityConstraints {
  std::function<Vector(const Vector&)> values;
  std::function<Matrix(const Vector&)> jacobian;
  Eigen::Index count = 0;
};

struct AugmentedLagrangianOptions {
  int max_outer_iterations = 60;
  int max_inner_iterations = 5000;
  double gradient_tolerance = 1e-7;
  double feasibility_tolerance = 1e-8;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e10;
};

struct AugmentedLagrangianResult {
  Vector x;
  double f = 0.0;
  Vector constraint_values;
  Vector multipliers;
  double lagrangian_gradient_norm = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
  bool converged = false;
  std::string message;
};

/// Minimizes f subject to c(x) = 0 through the augmented Lagrangian
///   f(x) − λ'c(x) + (μ/2)|c(x)|²
/// with first-order multiplier updates; μ grows when feasibility stalls.
/// With no constraints this reduces to a single BFGS solve.
AugmentedLagrangianResult minimize_augmented_lagrangian(const Objective& f,
                                                        const EqualityConstraints& constraints,
                                                        Vector x0,
                                                        const AugmentedLagrangianOptions& options);

}  // namespace bss::opt
