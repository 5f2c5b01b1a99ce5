#include "bss/model.hpp"

#include <cmath>
#include <sstream>

namespace bss {

LoadingPattern::LoadingPattern(std::size_t p, std::size_t q)
    : p_(p), q_(q), cells_(p * q, CellRole::FixedZero) {}

LoadingPattern LoadingPattern::independent_clusters(const std::vector<std::size_t>& salient_factor,
                                                    std::size_t q) {
  LoadingPattern pattern(salient_factor.size(), q);
  for (std::size_t i = 0; i < salient_factor.size(); ++i) {
    if (salient_factor[i] >= q) {
      throw StructuralError("salient factor index out of range for variable " +
                            std::to_string(i));
    }
    pattern.set_role(i, salient_factor[i], CellRole::SalientFree);
  }
  return pattern;
}

LoadingPattern LoadingPattern::buffered(const std::vector<std::size_t>& salient_factor,
                                        std::size_t q) {
  return independent_clusters(salient_factor, q).with_nonsalient(CellRole::NonsalientFree);
}

std::vector<std::size_t> LoadingPattern::contiguous_blocks(std::size_t q, std::size_t per_factor) {
  std::vector<std::size_t> assignment;
  assignment.reserve(q * per_factor);
  for (std::size_t f = 0; f < q; ++f) {
    assignment.insert(assignment.end(), per_factor, f);
  }
  return assignment;
}

void LoadingPattern::set_role(std::size_t var, std::size_t factor, CellRole role) {
  if (var >= p_ || factor >= q_) {
    throw StructuralError("loading cell out of range");
  }
  cells_[var * q_ + factor] = role;
}

std::size_t LoadingPattern::salient_factor(std::size_t var) const {
  std::optional<std::size_t> found;
  for (std::size_t j = 0; j < q_; ++j) {
    if (role(var, j) == CellRole::SalientFree) {
      if (found) {
        throw StructuralError("variable " + std::to_string(var) + " has multiple salient factors");
      }
      found = j;
    }
  }
  if (!found) {
    throw StructuralError("variable " + std::to_string(var) + " has no salient factor");
  }
  return *found;
}

std::vector<std::size_t> LoadingPattern::salient_assignment() const {
  std::vector<std::size_t> out(p_);
  for (std::size_t i = 0; i < p_; ++i) {
    out[i] = salient_factor(i);
  }
  return out;
}

std::vector<std::size_t> LoadingPattern::block_members(std::size_t factor) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p_; ++i) {
    if (role(i, factor) == CellRole::SalientFree) {
      out.push_back(i);
    }
  }
  return out;
}

LoadingPattern LoadingPattern::with_nonsalient(CellRole new_role) const {
  LoadingPattern out = *this;
  for (auto& cell : out.cells_) {
    if (cell != CellRole::SalientFree) {
      cell = new_role;
    }
  }
  return out;
}

std::size_t LoadingPattern::free_loading_count() const {
  std::size_t n = 0;
  for (auto cell : cells_) {
    n += cell != CellRole::FixedZero;
  }
  return n;
}

PhiSpec::PhiSpec(std::size_t q) : q_(q), cells_(q * q) {
  for (std::size_t i = 0; i < q; ++i) {
    cells_[i * q + i] = 1.0;
  }
}

PhiSpec PhiSpec::all_fixed(std::size_t q, double value) {
  PhiSpec spec(q);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      spec.set_fixed(i, j, value);
    }
  }
  return spec;
}

PhiSpec PhiSpec::fixed_at(const Matrix& phi) {
  if (phi.rows() != phi.cols()) {
    throw StructuralError("phi must be square");
  }
  PhiSpec spec(static_cast<std::size_t>(phi.rows()));
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      spec.set_fixed(i, j, phi(i, j));
    }
  }
  return spec;
}

void PhiSpec::set_free(std::size_t i, std::size_t j) {
  if (i == j) {
    throw StructuralError("factor variances are fixed at one");
  }
  cells_[i * q_ + j].reset();
  cells_[j * q_ + i].reset();
}

void PhiSpec::set_fixed(std::size_t i, std::size_t j, double value) {
  if (i == j) {
    throw StructuralError("factor variances are fixed at one");
  }
  cells_[i * q_ + j] = value;
  cells_[j * q_ + i] = value;
}

std::size_t PhiSpec::free_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < q_; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      n += is_free(i, j);
    }
  }
  return n;
}

std::vector<ModelViolation> validate_model(const FactorModel& model) {
  std::vector<ModelViolation> out;
  const auto& pat = model.pattern;
  const std::size_t p = pat.p();
  const std::size_t q = pat.q();

  if (q < 2) {
    out.push_back({"too few factors", "at least two factors are required"});
  }
  if (p < q) {
    out.push_back({"too few variables", "fewer variables than factors"});
  }
  for (std::size_t i = 0; i < p; ++i) {
    std::size_t salient = 0;
    for (std::size_t j = 0; j < q; ++j) {
      salient += pat.role(i, j) == CellRole::SalientFree;
    }
    if (salient == 0) {
      out.push_back({"no salient factor", "variable " + std::to_string(i) + " has no salient loading"});
    } else if (salient > 1) {
      out.push_back({"multiple salient factors",
                     "variable " + std::to_string(i) + " has " + std::to_string(salient) +
                         " salient loadings"});
    }
  }
  for (std::size_t j = 0; j < q; ++j) {
    if (pat.block_members(j).empty()) {
      out.push_back({"empty factor", "factor " + std::to_string(j) + " has no salient variable"});
    }
  }

  const auto& phi = model.phi;
  if (phi.q() != q) {
    out.push_back({"phi dimension", "phi specification does not match the factor count"});
  } else {
    for (std::size_t i = 0; i < q; ++i) {
      if (phi.entry(i, i) != std::optional<double>(1.0)) {
        out.push_back({"phi diagonal", "factor variance " + std::to_string(i) + " is not fixed at 1"});
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (phi.entry(i, j) != phi.entry(j, i)) {
          out.push_back({"phi asymmetric", "phi entries (" + std::to_string(i) + "," +
                                               std::to_string(j) + ") differ from their transpose"});
        } else if (auto v = phi.entry(i, j); v && !(std::abs(*v) <= 1.0)) {
          out.push_back({"phi out of range", "fixed correlation outside [-1, 1]"});
        }
      }
    }
  }
  if (!(model.uniqueness_floor > 0.0)) {
    out.push_back({"uniqueness floor", "uniqueness floor must be positive"});
  }
  return out;
}

ParameterLayout::ParameterLayout(const FactorModel& model)
    : p_(model.p()),
      q_(model.q()),
      loading_map_(p_ * q_, -1),
      phi_map_(q_ * q_, -1) {
  if (model.phi.q() != q_) {
    throw StructuralError("phi specification does not match the loading pattern");
  }
  for (std::size_t i = 0; i < p_; ++i) {
    for (std::size_t j = 0; j < q_; ++j) {
      if (model.pattern.is_free(i, j)) {
        loading_map_[i * q_ + j] = static_cast<long>(loading_slots_.size());
        loading_slots_.push_back({i, j});
      }
    }
  }
  n_loadings_ = loading_slots_.size();
  for (std::size_t i = 0; i < q_; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (model.phi.is_free(i, j)) {
        const long k = static_cast<long>(n_loadings_ + phi_slots_.size());
        phi_map_[i * q_ + j] = k;
        phi_map_[j * q_ + i] = k;
        phi_slots_.push_back({i, j});
      }
    }
  }
  n_phi_ = phi_slots_.size();
  size_ = n_loadings_ + n_phi_ + p_;
}

std::optional<std::size_t> ParameterLayout::loading_index(std::size_t var, std::size_t factor) const {
  const long k = loading_map_[var * q_ + factor];
  if (k < 0) return std::nullopt;
  return static_cast<std::size_t>(k);
}

std::optional<std::size_t> ParameterLayout::phi_index(std::size_t i, std::size_t j) const {
  const long k = phi_map_[i * q_ + j];
  if (k < 0) return std::nullopt;
  return static_cast<std::size_t>(k);
}

ParameterVector pack(const FactorModel& model, const ModelParameters& params) {
  const std::size_t p = model.p();
  const std::size_t q = model.q();
  if (static_cast<std::size_t>(params.lambda.rows()) != p ||
      static_cast<std::size_t>(params.lambda.cols()) != q ||
      static_cast<std::size_t>(params.phi.rows()) != q ||
      static_cast<std::size_t>(params.phi.cols()) != q ||
      static_cast<std::size_t>(params.psi.size()) != p) {
    throw StructuralError("parameter matrices do not match the model dimensions");
  }
  const ParameterLayout layout(model);
  ParameterVector theta{Vector(static_cast<Eigen::Index>(layout.size()))};
  Eigen::Index k = 0;
  for (const auto& slot : layout.loading_slots()) {
    theta.values[k++] = params.lambda(slot.var, slot.factor);
  }
  for (const auto& slot : layout.phi_slots()) {
    theta.values[k++] = params.phi(slot.row, slot.col);
  }
  for (std::size_t i = 0; i < p; ++i) {
    theta.values[k++] = params.psi[i];
  }
  return theta;
}

ModelParameters unpack(const FactorModel& model, const ParameterVector& theta) {
  const std::size_t p = model.p();
  const std::size_t q = model.q();
  const ParameterLayout layout(model);
  if (static_cast<std::size_t>(theta.size()) != layout.size()) {
    throw StructuralError("parameter vector has length " + std::to_string(theta.size()) +
                          ", model expects " + std::to_string(layout.size()));
  }
  ModelParameters out{Matrix::Zero(p, q), Matrix::Identity(q, q), Vector(p)};
  Eigen::Index k = 0;
  for (const auto& slot : layout.loading_slots()) {
    out.lambda(slot.var, slot.factor) = theta.values[k++];
  }
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (auto v = model.phi.entry(i, j)) {
        out.phi(i, j) = *v;
        out.phi(j, i) = *v;
      }
    }
  }
  for (const auto& slot : layout.phi_slots()) {
    out.phi(slot.row, slot.col) = theta.values[k];
    out.phi(slot.col, slot.row) = theta.values[k];
    ++k;
  }
  for (std::size_t i = 0; i < p; ++i) {
    out.psi[i] = theta.values[k++];
  }
  return out;
}

Matrix implied_covariance(const Matrix& lambda, const Matrix& phi, const Vector& psi) {
  if (lambda.cols() != phi.rows() || phi.rows() != phi.cols() || lambda.rows() != psi.size()) {
    std::ostringstream msg;
    msg << "implied_covariance: lambda " << lambda.rows() << "x" << lambda.cols() << ", phi "
        << phi.rows() << "x" << phi.cols() << ", psi " << psi.size();
    throw StructuralError(msg.str());
  }
  const Matrix lp = lambda * phi;
  const Eigen::Index p = lambda.rows();
  Matrix sigma(p, p);
  // Fill one triangle and mirror so the result is exactly symmetric.
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = lp.row(i).dot(lambda.row(j));
      sigma(i, j) = v;
      sigma(j, i) = v;
    }
    sigma(i, i) += psi[i];
  }
  return sigma;
}

Vector standardizing_uniqueness(const Matrix& lambda, const Matrix& phi) {
  if (lambda.cols() != phi.rows() || phi.rows() != phi.cols()) {
    throw StructuralError("standardizing_uniqueness: lambda and phi are not conformable");
  }
  const Matrix lp = lambda * phi;
  Vector psi(lambda.rows());
  for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
    const double communality = lp.row(i).dot(lambda.row(i));
    if (!(communality < 1.0)) {
      throw InvalidPopulationError("variable " + std::to_string(i) + " has communality " +
                                   std::to_string(communality) + " >= 1");
    }
    psi[i] = 1.0 - communality;
  }
  return psi;
}

PopulationModel PopulationModel::standardized(const Matrix& lambda, const Matrix& phi) {
  PopulationModel pop;
  pop.lambda = lambda;
  pop.phi = phi;
  pop.psi = standardizing_uniqueness(lambda, phi);
  pop.sigma = implied_covariance(lambda, phi, pop.psi);
  if (Eigen::LLT<Matrix>(pop.sigma).info() != Eigen::Success) {
    throw InvalidPopulationError("population correlation matrix is not positive definite");
  }
  return pop;
}

}  // namespace bss
