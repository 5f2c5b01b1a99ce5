#include "bss/estimator.hpp"

#include "bss/optimizer.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace bss {

namespace {

double log_det_or_throw(const Eigen::LLT<Matrix>& llt, const char* what) {
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + " is not positive definite");
  }
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Maps free parameters to the three model matrices without rebuilding the
/// layout on every call.
class ModelMap {
 public:
  explicit ModelMap(const FactorModel& model) : model_(model), layout_(model) {
    base_ = unpack(model, ParameterVector{Vector::Zero(static_cast<Eigen::Index>(layout_.size()))});
  }

  const ParameterLayout& layout() const { return layout_; }

  void fill(const Vector& theta, ModelParameters& out) const {
    out.lambda = base_.lambda;
    out.phi = base_.phi;
    out.psi.resize(static_cast<Eigen::Index>(model_.p()));
    Eigen::Index k = 0;
    for (const auto& slot : layout_.loading_slots()) {
      out.lambda(slot.var, slot.factor) = theta[k++];
    }
    for (const auto& slot : layout_.phi_slots()) {
      out.phi(slot.row, slot.col) = theta[k];
      out.phi(slot.col, slot.row) = theta[k];
      ++k;
    }
    for (std::size_t i = 0; i < model_.p(); ++i) {
      out.psi[static_cast<Eigen::Index>(i)] = theta[k++];
    }
  }

  /// F(θ) and ∂F/∂θ; returns +inf when Σ(θ) is not positive definite.
  double evaluate(const Vector& theta, const Matrix& s, double log_det_s, Vector& grad) const {
    ModelParameters m;
    fill(theta, m);
    const Matrix sigma = implied_covariance(m.lambda, m.phi, m.psi);
    const Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) {
      return std::numeric_limits<double>::infinity();
    }
    const auto p = sigma.rows();
    const Matrix sigma_inv = llt.solve(Matrix::Identity(p, p));
    const Matrix lower = llt.matrixL();
    const double log_det_sigma = 2.0 * lower.diagonal().array().log().sum();
    const double f = log_det_sigma - log_det_s + (s.cwiseProduct(sigma_inv)).sum() -
                     static_cast<double>(p);
    if (!std::isfinite(f)) {
      return std::numeric_limits<double>::infinity();
    }

    // ∂F/∂Σ = Σ⁻¹(Σ − S)Σ⁻¹
    const Matrix g = sigma_inv - sigma_inv * s * sigma_inv;
    const Matrix d_lambda = 2.0 * g * m.lambda * m.phi;
    grad.resize(theta.size());
    Eigen::Index k = 0;
    for (const auto& slot : layout_.loading_slots()) {
      grad[k++] = d_lambda(slot.var, slot.factor);
    }
    if (!layout_.phi_slots().empty()) {
      const Matrix lgl = m.lambda.transpose() * g * m.lambda;
      for (const auto& slot : layout_.phi_slots()) {
        grad[k++] = 2.0 * lgl(slot.row, slot.col);
      }
    }
    for (Eigen::Index i = 0; i < p; ++i) {
      grad[k++] = g(i, i);
    }
    return f;
  }

 private:
  const FactorModel& model_;
  ParameterLayout layout_;
  ModelParameters base_;
};

void throw_if_invalid(const FactorModel& model) {
  const auto violations = validate_model(model);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << "invalid factor model:";
  for (const auto& v : violations) {
    msg << " [" << v.code << "] " << v.message << ";";
  }
  throw StructuralError(msg.str());
}

}  // namespace

void check_moments(const SampleMoments& moments) {
  const Matrix& s = moments.s;
  if (s.rows() != s.cols() || s.rows() == 0) {
    throw NumericalError("sample moment matrix is not square");
  }
  if (!s.allFinite()) {
    throw NumericalError("sample moment matrix contains non-finite values");
  }
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw NumericalError("sample moment matrix is not symmetric");
  }
  if (Eigen::LLT<Matrix>(s).info() != Eigen::Success) {
    throw NumericalError("sample moment matrix S is not positive definite");
  }
}

double ml_discrepancy(const Matrix& s, const Matrix& sigma) {
  if (s.rows() != sigma.rows() || s.cols() != sigma.cols() || s.rows() != s.cols()) {
    throw StructuralError("ml_discrepancy: S and Sigma are not conformable");
  }
  const Eigen::LLT<Matrix> llt_s(s);
  const double log_det_s = log_det_or_throw(llt_s, "sample matrix S");
  const Eigen::LLT<Matrix> llt_sigma(sigma);
  const double log_det_sigma = log_det_or_throw(llt_sigma, "model-implied matrix Sigma");
  const Matrix sigma_inv = llt_sigma.solve(Matrix::Identity(sigma.rows(), sigma.cols()));
  return log_det_sigma - log_det_s + s.cwiseProduct(sigma_inv).sum() -
         static_cast<double>(s.rows());
}

Vector ml_gradient(const FactorModel& model, const ParameterVector& theta, const Matrix& s) {
  const ModelMap map(model);
  if (static_cast<std::size_t>(theta.size()) != map.layout().size()) {
    throw StructuralError("parameter vector does not match the model");
  }
  if (static_cast<std::size_t>(s.rows()) != model.p()) {
    throw StructuralError("sample matrix does not match the model");
  }
  const double log_det_s = log_det_or_throw(Eigen::LLT<Matrix>(s), "sample matrix S");
  Vector grad;
  const double f = map.evaluate(theta.values, s, log_det_s, grad);
  if (!std::isfinite(f)) {
    throw NumericalError("model-implied matrix Sigma is not positive definite");
  }
  return grad;
}

ModelParameters starting_values(const FactorModel& model, const FitOptions& options) {
  const std::size_t p = model.p();
  const std::size_t q = model.q();
  ModelParameters start{Matrix::Zero(p, q), Matrix::Identity(q, q),
                        Vector::Constant(p, options.start_uniqueness)};
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      switch (model.pattern.role(i, j)) {
        case CellRole::SalientFree:
          start.lambda(i, j) = options.start_salient;
          break;
        case CellRole::NonsalientFree:
          if (options.perturbation > 0.0) {
            start.lambda(i, j) = coin(rng) ? options.perturbation : -options.perturbation;
          }
          break;
        case CellRole::FixedZero:
          break;
      }
    }
  }
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (auto v = model.phi.entry(i, j)) {
        start.phi(i, j) = start.phi(j, i) = *v;
      }
    }
  }
  if (options.start) {
    const auto& s = *options.start;
    if (static_cast<std::size_t>(s.lambda.rows()) != p ||
        static_cast<std::size_t>(s.lambda.cols()) != q ||
        static_cast<std::size_t>(s.phi.rows()) != q ||
        static_cast<std::size_t>(s.psi.size()) != p) {
      throw StructuralError("supplied starting values do not match the model");
    }
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < q; ++j) {
        if (model.pattern.is_free(i, j) && s.lambda(i, j) != 0.0) {
          start.lambda(i, j) = s.lambda(i, j);
        }
      }
    }
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (model.phi.is_free(i, j)) {
          start.phi(i, j) = start.phi(j, i) = s.phi(i, j);
        }
      }
    }
    start.psi = s.psi;
  }
  const double min_psi = 2.0 * model.uniqueness_floor;
  start.psi = start.psi.cwiseMax(min_psi);
  return start;
}

void align_factor_signs(const FactorModel& model, Matrix& lambda, Matrix& phi) {
  const std::size_t q = model.q();
  for (std::size_t j = 0; j < q; ++j) {
    bool locked = false;
    for (std::size_t k = 0; k < q; ++k) {
      if (k != j) {
        if (auto v = model.phi.entry(j, k); v && *v != 0.0) locked = true;
      }
    }
    if (locked) continue;
    const auto members = model.pattern.block_members(j);
    if (members.empty()) continue;
    if (lambda(members.front(), j) < 0.0) {
      lambda.col(j) *= -1.0;
      phi.row(j) *= -1.0;
      phi.col(j) *= -1.0;
    }
  }
}

Solution fit(const FactorModel& model, const ConstraintSet* constraints,
             const SampleMoments& moments, const FitOptions& options) {
  throw_if_invalid(model);
  if (!(options.gradient_tolerance > 0.0) || !(options.feasibility_tolerance > 0.0)) {
    throw StructuralError("fit tolerances must be positive");
  }
  check_moments(moments);
  if (moments.p() != model.p()) {
    throw StructuralError("sample matrix has " + std::to_string(moments.p()) +
                          " variables, model has " + std::to_string(model.p()));
  }
  if (constraints != nullptr) {
    check_constraints(*constraints, model);
  }

  const ModelMap map(model);
  const auto& layout = map.layout();
  const Matrix& s = moments.s;
  const double log_det_s = log_det_or_throw(Eigen::LLT<Matrix>(s), "sample matrix S");
  const double floor = model.uniqueness_floor;
  const auto psi_begin = static_cast<Eigen::Index>(layout.loading_count() + layout.phi_count());
  const auto p = static_cast<Eigen::Index>(model.p());

  // Optimizer coordinates: θ with each ψ replaced by log(ψ − floor).
  auto to_theta = [&](const Vector& x) {
    Vector theta = x;
    for (Eigen::Index i = 0; i < p; ++i) {
      theta[psi_begin + i] = floor + std::exp(x[psi_begin + i]);
    }
    return theta;
  };

  opt::Objective objective = [&](const Vector& x, Vector& grad) {
    const Vector theta = to_theta(x);
    const double f = map.evaluate(theta, s, log_det_s, grad);
    if (std::isfinite(f)) {
      for (Eigen::Index i = 0; i < p; ++i) {
        grad[psi_begin + i] *= theta[psi_begin + i] - floor;
      }
    }
    return f;
  };

  opt::EqualityConstraints eq;
  if (constraints != nullptr && constraints->size() > 0) {
    eq.count = static_cast<Eigen::Index>(constraints->size());
    eq.values = [&](const Vector& x) {
      ModelParameters m;
      map.fill(x, m);  // ψ entries are not used by the constraints
      return constraint_values(*constraints, m.lambda, model.pattern);
    };
    eq.jacobian = [&](const Vector& x) {
      return constraint_jacobian(*constraints, ParameterVector{x}, model);
    };
  }

  const ModelParameters start = starting_values(model, options);
  Vector x0 = pack(model, start).values;
  for (Eigen::Index i = 0; i < p; ++i) {
    x0[psi_begin + i] = std::log(x0[psi_begin + i] - floor);
  }

  opt::AugmentedLagrangianOptions ao;
  ao.max_outer_iterations = options.max_outer_iterations;
  ao.max_inner_iterations = options.max_inner_iterations;
  ao.gradient_tolerance = options.gradient_tolerance;
  ao.feasibility_tolerance = options.feasibility_tolerance;
  ao.initial_penalty = options.initial_penalty;
  ao.penalty_growth = options.penalty_growth;
  const auto result = opt::minimize_augmented_lagrangian(objective, eq, x0, ao);

  Solution sol;
  ModelParameters est;
  map.fill(to_theta(result.x), est);
  if (options.align_signs) {
    align_factor_signs(model, est.lambda, est.phi);
  }
  sol.lambda_hat = std::move(est.lambda);
  sol.phi_hat = std::move(est.phi);
  sol.psi_hat = std::move(est.psi);
  sol.f_min = result.f;
  sol.n_iterations = result.inner_iterations;
  sol.gradient_norm = result.lagrangian_gradient_norm;
  sol.constraint_residuals = constraints != nullptr
                                 ? constraint_values(*constraints, sol.lambda_hat, model.pattern)
                                 : Vector(0);
  sol.converged = result.converged && std::isfinite(sol.f_min) &&
                  sol.max_constraint_residual() < options.feasibility_tolerance;
  sol.message = result.message;
  return sol;
}

}  // namespace bss
