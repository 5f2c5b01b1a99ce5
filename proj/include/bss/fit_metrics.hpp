#pragma once

#include "bss/constraints.hpp"
#include "bss/estimator.hpp"
#include "bss/model.hpp"

#include <optional>

namespace bss {

class ModelNotTestableError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Fit indices of one solution. χ²-based entries are empty when the sample
/// size is unknown (population matrices); SRMR is always available.
struct FitReport {
  std::optional<double> chi_square;
  int df = 0;
  double srmr = 0.0;
  std::optional<double> rmsea;
  std::optional<double> cfi;
  std::optional<double> baseline_chi_square;
  int baseline_df = 0;
  std::optional<double> n;
};

/// p(p+1)/2 − free parameters + equality constraints.
int degrees_of_freedom(const FactorModel& model, const ConstraintSet* constraints);

double srmr(const Matrix& s, const Matrix& sigma_hat);

/// sqrt(max((χ² − df) / (df·(n − 1)), 0)).
double rmsea(double chi_square, int df, double n);

double cfi(double chi_square, int df, double baseline_chi_square, int baseline_df);

struct BaselineFit {
  double chi_square = 0.0;
  int df = 0;
};

/// Independence model Σ_b = diag(S): χ²_b = (n − 1)·(−ln|R|), df_b = p(p − 1)/2.
BaselineFit baseline_fit(const SampleMoments& moments);

/// χ² = (n − 1)·F_min.
double chi_square(double f_min, double n);

FitReport fit_report(const FactorModel& model, const ConstraintSet* constraints,
                     const SampleMoments& moments, const Solution& solution);

}  // namespace bss
