#include "bss/fit_metrics.hpp"

#include <algorithm>
#include <cmath>

namespace bss {

int degrees_of_freedom(const FactorModel& model, const ConstraintSet* constraints) {
  const auto p = static_cast<long>(model.p());
  const long moments = p * (p + 1) / 2;
  const long free = static_cast<long>(model.pattern.free_loading_count() + model.phi.free_count()) + p;
  const long n_constraints = constraints != nullptr ? static_cast<long>(constraints->size()) : 0;
  const long df = moments - free + n_constraints;
  if (df < 0) {
    throw ModelNotTestableError("model has negative degrees of freedom (" + std::to_string(df) +
                                ")");
  }
  return static_cast<int>(df);
}

double srmr(const Matrix& s, const Matrix& sigma_hat) {
  if (s.rows() != sigma_hat.rows() || s.cols() != sigma_hat.cols() || s.rows() != s.cols()) {
    throw StructuralError("srmr: matrices are not conformable");
  }
  const Eigen::Index p = s.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double r = (s(i, j) - sigma_hat(i, j)) / std::sqrt(s(i, i) * s(j, j));
      sum += r * r;
    }
  }
  return std::sqrt(sum / static_cast<double>(p * (p + 1) / 2));
}

double rmsea(double chi_square, int df, double n) {
  if (df <= 0 || !(n > 1.0)) {
    throw std::domain_error("rmsea needs df > 0 and n > 1");
  }
  const double d = static_cast<double>(df);
  return std::sqrt(std::max((chi_square - d) / (d * (n - 1.0)), 0.0));
}

double cfi(double chi_square, int df, double baseline_chi_square, int baseline_df) {
  const double model_excess = std::max(chi_square - df, 0.0);
  const double denom = std::max({baseline_chi_square - baseline_df, chi_square - df, 0.0});
  if (denom <= 0.0) return 1.0;
  return std::clamp(1.0 - model_excess / denom, 0.0, 1.0);
}

BaselineFit baseline_fit(const SampleMoments& moments) {
  check_moments(moments);
  if (!moments.n) {
    throw std::domain_error("baseline fit needs the sample size");
  }
  const Matrix& s = moments.s;
  const Vector inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
  const Matrix r = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
  const Eigen::LLT<Matrix> llt(r);
  const double log_det_r = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const auto p = static_cast<int>(s.rows());
  return {(*moments.n - 1.0) * (-log_det_r), p * (p - 1) / 2};
}

double chi_square(double f_min, double n) { return (n - 1.0) * f_min; }

FitReport fit_report(const FactorModel& model, const ConstraintSet* constraints,
                     const SampleMoments& moments, const Solution& solution) {
  FitReport report;
  report.df = degrees_of_freedom(model, constraints);
  report.srmr = srmr(moments.s, solution.sigma_hat());
  report.n = moments.n;
  if (moments.n) {
    const double n = *moments.n;
    report.chi_square = chi_square(solution.f_min, n);
    const auto base = baseline_fit(moments);
    report.baseline_chi_square = base.chi_square;
    report.baseline_df = base.df;
    if (report.df > 0) {
      report.rmsea = rmsea(*report.chi_square, report.df, n);
    }
    report.cfi = cfi(*report.chi_square, report.df, base.chi_square, base.df);
  }
  return report;
}

}  // namespace bss
