#pragma once

#include "bss/constraints.hpp"
#include "bss/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bss {

/// Observed moments: a covariance or correlation matrix and, when known, the
/// number of observations it was computed from.
struct SampleMoments {
  Matrix s;
  std::optional<double> n;
  std::vector<std::string> names;

  std::size_t p() const { return static_cast<std::size_t>(s.rows()); }
};

/// Throws NumericalError unless `s` is square, symmetric and positive definite.
void check_moments(const SampleMoments& moments);

struct FitOptions {
  int max_outer_iterations = 60;
  int max_inner_iterations = 5000;
  double gradient_tolerance = 1e-7;
  double feasibility_tolerance = 1e-8;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;

  double start_salient = 0.5;
  double start_uniqueness = 0.5;
  /// Overrides the default starting values for every free cell it covers.
  std::optional<ModelParameters> start;

  /// Flip factors so each factor's first salient loading is nonnegative.
  bool align_signs = true;
  /// Magnitude of the seeded ± perturbation of free non-salient starts.
  double perturbation = 1e-3;
  std::uint64_t seed = 0;
};

/// F = ln|Σ| − ln|S| + tr(SΣ⁻¹) − p.
double ml_discrepancy(const Matrix& s, const Matrix& sigma);

/// ∂F/∂θ in ParameterVector order.
Vector ml_gradient(const FactorModel& model, const ParameterVector& theta, const Matrix& s);

/// Starting point used by fit(), exposed for tests and diagnostics.
ModelParameters starting_values(const FactorModel& model, const FitOptions& options);

/// Minimizes F under the given equality constraints. Non-convergence is
/// reported through Solution::converged, never thrown.
Solution fit(const FactorModel& model, const ConstraintSet* constraints,
             const SampleMoments& moments, const FitOptions& options = {});
inline Solution fit(const FactorModel& model, const SampleMoments& moments,
                    const FitOptions& options = {}) {
  return fit(model, nullptr, moments, options);
}

/// Flips factor columns of Λ (and the matching rows/columns of Φ) so each
/// factor's first salient loading is nonnegative. Factors with a nonzero
/// fixed correlation are left alone since a flip would change the model.
void align_factor_signs(const FactorModel& model, Matrix& lambda, Matrix& phi);

}  // namespace bss
