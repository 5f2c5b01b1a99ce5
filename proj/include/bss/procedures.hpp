#pragma once

#include "bss/constraints.hpp"
#include "bss/estimator.hpp"
#include "bss/fit_metrics.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace bss {

struct ProcedureStep {
  std::string label;
  FactorModel model;
  std::optional<ConstraintSet> constraints;
  Solution solution;
  FitReport fit;
  /// Multi-step only: weights embedded in this step's constraints and the
  /// largest |weight − salient estimate| they produced.
  std::optional<Vector> weights;
  std::optional<double> weight_gap;
};

struct ProcedureTrace {
  std::string procedure;
  std::vector<ProcedureStep> steps;
  bool converged = false;

  const ProcedureStep& final_step() const { return steps.back(); }
};

/// Estimates of variable k's salient loading, in variable order.
Vector salient_estimates(const LoadingPattern& pattern, const Matrix& lambda);

/// Single fit with self-weighted (1 + s²) balance constraints on every block.
ProcedureTrace one_step(const LoadingPattern& pattern, const PhiSpec& phi,
                        const SampleMoments& moments, const FitOptions& options = {});

/// ICM fit only, with every non-salient loading fixed at zero.
ProcedureTrace icm(const LoadingPattern& pattern, const PhiSpec& phi, const SampleMoments& moments,
                   const FitOptions& options = {});

struct MultiStepOptions {
  double weight_tolerance = 1e-4;
  int max_rounds = 10;  // total models, including the initial ICM
  /// Fix free interfactor correlations at the ICM estimates in the
  /// constrained steps (otherwise they stay free).
  bool fix_phi_from_icm = true;
  /// Start from these weights instead of an ICM fit.
  std::optional<Vector> initial_weights;
  /// Exchanges applied to every constrained step's membership.
  std::vector<std::pair<std::size_t, std::size_t>> member_swaps;
};

/// ICM fit, then fixed-weight constrained refits whose weights are the
/// previous step's salient estimates, until weights and estimates agree.
ProcedureTrace multi_step(const LoadingPattern& pattern, const PhiSpec& phi,
                          const SampleMoments& moments, const FitOptions& options,
                          const MultiStepOptions& ms);
inline ProcedureTrace multi_step(const LoadingPattern& pattern, const SampleMoments& moments,
                                 const FitOptions& options, double weight_tolerance = 1e-4,
                                 int max_rounds = 10) {
  MultiStepOptions ms;
  ms.weight_tolerance = weight_tolerance;
  ms.max_rounds = max_rounds;
  return multi_step(pattern, PhiSpec::all_free(pattern.q()), moments, options, ms);
}

struct ModificationIndex {
  std::size_t var = 0;
  std::size_t factor = 0;
  double value = 0.0;  // χ² drop from freeing the single cell
  bool converged = false;
};

/// Exact χ²-difference index for every fixed-zero cell of an ICM fit, in
/// (variable, factor) order. Refits run in parallel when `threads` > 1.
std::vector<ModificationIndex> modification_indices(const FactorModel& icm_model,
                                                    const SampleMoments& moments,
                                                    const Solution& icm_solution,
                                                    const FitOptions& options,
                                                    unsigned threads = 0);

/// Frees, per factor, up to `max_freed_per_factor` cells with an index above
/// `mi_threshold` (largest first; ties by factor, then variable) and refits.
ProcedureTrace specification_search(const LoadingPattern& pattern, const PhiSpec& phi,
                                    const SampleMoments& moments, const FitOptions& options,
                                    double mi_threshold, std::size_t max_freed_per_factor);

}  // namespace bss
