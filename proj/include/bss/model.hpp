#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when matrix or vector shapes do not fit the model they are used with.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a population loading structure implies a communality >= 1.
class InvalidPopulationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Thrown when a matrix that must be positive definite is not.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CellRole { FixedZero, SalientFree, NonsalientFree };

/// p x q grid of loading roles. Variables are grouped into blocks by their
/// salient factor; a block's non-salient cells on another factor are the
/// objects the balance constraints act on.
class LoadingPattern {
 public:
  LoadingPattern() = default;
  LoadingPattern(std::size_t p, std::size_t q);

  /// One salient cell per variable, every other cell fixed at zero.
  static LoadingPattern independent_clusters(const std::vector<std::size_t>& salient_factor,
                                             std::size_t q);
  /// One salient cell per variable, every other cell free.
  static LoadingPattern buffered(const std::vector<std::size_t>& salient_factor, std::size_t q);
  /// Contiguous blocks of `per_factor` variables for each of `q` factors.
  static std::vector<std::size_t> contiguous_blocks(std::size_t q, std::size_t per_factor);

  std::size_t p() const { return p_; }
  std::size_t q() const { return q_; }

  CellRole role(std::size_t var, std::size_t factor) const { return cells_[var * q_ + factor]; }
  void set_role(std::size_t var, std::size_t factor, CellRole role);
  bool is_free(std::size_t var, std::size_t factor) const {
    return role(var, factor) != CellRole::FixedZero;
  }

  /// Index of the variable's salient factor; throws StructuralError unless the
  /// row holds exactly one salient cell.
  std::size_t salient_factor(std::size_t var) const;
  std::vector<std::size_t> salient_assignment() const;
  /// Variables whose salient factor is `factor`, in variable order.
  std::vector<std::size_t> block_members(std::size_t factor) const;

  /// Same salient cells, non-salient cells set to `role`.
  LoadingPattern with_nonsalient(CellRole role) const;

  std::size_t free_loading_count() const;

  bool operator==(const LoadingPattern&) const = default;

 private:
  std::size_t p_ = 0;
  std::size_t q_ = 0;
  std::vector<CellRole> cells_;
};

/// Interfactor correlation specification. Diagonal entries are always fixed at
/// one; an empty optional marks a free off-diagonal pair.
class PhiSpec {
 public:
  PhiSpec() = default;
  explicit PhiSpec(std::size_t q);  // all pairs free

  static PhiSpec all_free(std::size_t q) { return PhiSpec(q); }
  static PhiSpec all_fixed(std::size_t q, double value);
  static PhiSpec fixed_at(const Matrix& phi);

  std::size_t q() const { return q_; }
  std::optional<double> entry(std::size_t i, std::size_t j) const { return cells_[i * q_ + j]; }
  bool is_free(std::size_t i, std::size_t j) const { return i != j && !entry(i, j).has_value(); }
  void set_free(std::size_t i, std::size_t j);
  void set_fixed(std::size_t i, std::size_t j, double value);
  /// Raw, possibly asymmetric, assignment used when a document is being checked.
  void set_entry_unchecked(std::size_t i, std::size_t j, std::optional<double> value) {
    cells_[i * q_ + j] = value;
  }

  std::size_t free_count() const;

  bool operator==(const PhiSpec&) const = default;

 private:
  std::size_t q_ = 0;
  std::vector<std::optional<double>> cells_;
};

inline constexpr double kDefaultUniquenessFloor = 0.001;

struct FactorModel {
  LoadingPattern pattern;
  PhiSpec phi;
  double uniqueness_floor = kDefaultUniquenessFloor;

  std::size_t p() const { return pattern.p(); }
  std::size_t q() const { return pattern.q(); }
};

struct ModelViolation {
  std::string code;
  std::string message;
};

/// Checks pattern and Φ-spec invariants; returns every violation found.
std::vector<ModelViolation> validate_model(const FactorModel& model);

/// Estimates or population values of the three parameter matrices.
struct ModelParameters {
  Matrix lambda;
  Matrix phi;
  Vector psi;
};

/// Free parameters in fixed order: free loadings row-major, free Φ entries of
/// the strict lower triangle row-major, then one uniqueness per variable.
struct ParameterVector {
  Vector values;

  Eigen::Index size() const { return values.size(); }
  double operator[](Eigen::Index k) const { return values[k]; }
};

/// Position of every free parameter inside a ParameterVector.
class ParameterLayout {
 public:
  explicit ParameterLayout(const FactorModel& model);

  std::size_t size() const { return size_; }
  std::size_t loading_count() const { return n_loadings_; }
  std::size_t phi_count() const { return n_phi_; }

  std::optional<std::size_t> loading_index(std::size_t var, std::size_t factor) const;
  /// Symmetric: (i, j) and (j, i) give the same slot.
  std::optional<std::size_t> phi_index(std::size_t i, std::size_t j) const;
  std::size_t psi_index(std::size_t var) const { return n_loadings_ + n_phi_ + var; }

  struct LoadingSlot {
    std::size_t var;
    std::size_t factor;
  };
  struct PhiSlot {
    std::size_t row;
    std::size_t col;
  };
  const std::vector<LoadingSlot>& loading_slots() const { return loading_slots_; }
  const std::vector<PhiSlot>& phi_slots() const { return phi_slots_; }

 private:
  std::size_t p_ = 0;
  std::size_t q_ = 0;
  std::size_t n_loadings_ = 0;
  std::size_t n_phi_ = 0;
  std::size_t size_ = 0;
  std::vector<long> loading_map_;
  std::vector<long> phi_map_;
  std::vector<LoadingSlot> loading_slots_;
  std::vector<PhiSlot> phi_slots_;
};

ParameterVector pack(const FactorModel& model, const ModelParameters& params);
ModelParameters unpack(const FactorModel& model, const ParameterVector& theta);

/// Σ = ΛΦΛ' + diag(ψ).
Matrix implied_covariance(const Matrix& lambda, const Matrix& phi, const Vector& psi);
inline Matrix implied_covariance(const ModelParameters& m) {
  return implied_covariance(m.lambda, m.phi, m.psi);
}

/// ψᵢ = 1 − λᵢ'Φλᵢ, so that the implied matrix has a unit diagonal.
Vector standardizing_uniqueness(const Matrix& lambda, const Matrix& phi);

struct PopulationModel {
  Matrix lambda;
  Matrix phi;
  Vector psi;
  Matrix sigma;

  static PopulationModel standardized(const Matrix& lambda, const Matrix& phi);
};

struct Solution {
  Matrix lambda_hat;
  Matrix phi_hat;
  Vector psi_hat;
  double f_min = 0.0;
  int n_iterations = 0;
  bool converged = false;
  Vector constraint_residuals;
  double gradient_norm = 0.0;
  std::string message;

  ModelParameters parameters() const { return {lambda_hat, phi_hat, psi_hat}; }
  Matrix sigma_hat() const { return implied_covariance(lambda_hat, phi_hat, psi_hat); }
  double max_constraint_residual() const {
    return constraint_residuals.size() == 0 ? 0.0 : constraint_residuals.cwiseAbs().maxCoeff();
  }
};

}  // namespace bss
