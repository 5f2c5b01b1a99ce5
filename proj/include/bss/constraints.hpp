#pragma once

#include "bss/model.hpp"

#include <span>

namespace bss {

enum class ConstraintMode {
  /// Σₖ wₖ·λₖⱼ = 0 with constant weights (salient loadings of a previous fit).
  FixedWeights,
  /// Σₖ (1 + sₖ²)·λₖⱼ = 0 where sₖ is variable k's own salient loading.
  SelfWeighted,
};

/// One balance constraint: the weighted sum of the loadings of `members` on
/// the unwanted factor `factor` is zero. `block` is the salient factor the
/// members were taken from.
struct BlockConstraint {
  std::size_t block = 0;
  std::size_t factor = 0;
  std::vector<std::size_t> members;
  std::vector<double> weights;  // FixedWeights only, parallel to members

  bool operator==(const BlockConstraint&) const = default;
};

struct ConstraintSet {
  ConstraintMode mode = ConstraintMode::FixedWeights;
  std::vector<BlockConstraint> constraints;

  std::size_t size() const { return constraints.size(); }
  bool operator==(const ConstraintSet&) const = default;
};

struct ConstraintResidual {
  Vector values;
  double max_abs() const { return values.size() == 0 ? 0.0 : values.cwiseAbs().maxCoeff(); }
};

/// One constraint per (block, unwanted factor) pair, embedding `weights[k]`
/// (one per variable; typically its salient loading from a prior fit).
ConstraintSet build_fixed_weight_constraints(const LoadingPattern& pattern,
                                             std::span<const double> weights);
ConstraintSet build_fixed_weight_constraints(const LoadingPattern& pattern, const Vector& weights);

/// One constraint per (block, unwanted factor) pair with weights 1 + s².
ConstraintSet build_one_step_constraints(const LoadingPattern& pattern);

/// Exchanges variables `a` and `b` wherever either appears as a constraint
/// member. Weights stay in place. Used to study misplaced constraints.
ConstraintSet swap_members(const ConstraintSet& set, std::size_t a, std::size_t b);

/// Residuals evaluated directly on a loading matrix.
Vector constraint_values(const ConstraintSet& set, const Matrix& lambda,
                         const LoadingPattern& pattern);

ConstraintResidual evaluate_constraints(const ConstraintSet& set, const ParameterVector& theta,
                                        const FactorModel& model);

/// d(residual)/dθ, one row per constraint.
Matrix constraint_jacobian(const ConstraintSet& set, const ParameterVector& theta,
                           const FactorModel& model);

/// Σ over (block i, unwanted factor j) of |Σₖ λₖᵢ·λₖⱼ| for the members k of
/// block i; zero exactly when every block is balanced.
double buffered_quality_index(const Matrix& lambda_hat, const LoadingPattern& pattern);

/// Throws StructuralError if a constraint refers to a fixed cell or to a
/// variable/factor outside the model.
void check_constraints(const ConstraintSet& set, const FactorModel& model);

}  // namespace bss
