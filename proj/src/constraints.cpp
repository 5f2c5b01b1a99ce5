#include "bss/constraints.hpp"

#include <cmath>

namespace bss {

namespace {

double member_weight(const ConstraintSet& set, const BlockConstraint& c, std::size_t slot,
                     const Matrix& lambda, const LoadingPattern& pattern) {
  if (set.mode == ConstraintMode::FixedWeights) {
    return c.weights[slot];
  }
  const std::size_t k = c.members[slot];
  const double s = lambda(k, pattern.salient_factor(k));
  return 1.0 + s * s;
}

}  // namespace

ConstraintSet build_fixed_weight_constraints(const LoadingPattern& pattern,
                                             std::span<const double> weights) {
  if (weights.size() != pattern.p()) {
    throw StructuralError("fixed-weight constraints need one weight per variable (got " +
                          std::to_string(weights.size()) + ", expected " +
                          std::to_string(pattern.p()) + ")");
  }
  ConstraintSet set{ConstraintMode::FixedWeights, {}};
  for (std::size_t i = 0; i < pattern.q(); ++i) {
    const auto members = pattern.block_members(i);
    std::vector<double> w;
    w.reserve(members.size());
    bool any_nonzero = false;
    for (auto k : members) {
      if (!std::isfinite(weights[k])) {
        throw StructuralError("missing weight for variable " + std::to_string(k));
      }
      w.push_back(weights[k]);
      any_nonzero = any_nonzero || weights[k] != 0.0;
    }
    if (!any_nonzero) {
      throw StructuralError("all weights of block " + std::to_string(i) +
                            " are zero; its constraints would be vacuous");
    }
    for (std::size_t j = 0; j < pattern.q(); ++j) {
      if (j != i) {
        set.constraints.push_back({i, j, members, w});
      }
    }
  }
  return set;
}

ConstraintSet build_fixed_weight_constraints(const LoadingPattern& pattern, const Vector& weights) {
  return build_fixed_weight_constraints(
      pattern, std::span<const double>(weights.data(), static_cast<std::size_t>(weights.size())));
}

ConstraintSet build_one_step_constraints(const LoadingPattern& pattern) {
  ConstraintSet set{ConstraintMode::SelfWeighted, {}};
  for (std::size_t i = 0; i < pattern.q(); ++i) {
    const auto members = pattern.block_members(i);
    for (std::size_t j = 0; j < pattern.q(); ++j) {
      if (j != i) {
        set.constraints.push_back({i, j, members, {}});
      }
    }
  }
  return set;
}

ConstraintSet swap_members(const ConstraintSet& set, std::size_t a, std::size_t b) {
  ConstraintSet out = set;
  for (auto& c : out.constraints) {
    for (auto& k : c.members) {
      if (k == a) {
        k = b;
      } else if (k == b) {
        k = a;
      }
    }
  }
  return out;
}

void check_constraints(const ConstraintSet& set, const FactorModel& model) {
  for (const auto& c : set.constraints) {
    if (c.factor >= model.q() || c.block >= model.q()) {
      throw StructuralError("constraint refers to a factor outside the model");
    }
    if (set.mode == ConstraintMode::FixedWeights && c.weights.size() != c.members.size()) {
      throw StructuralError("fixed-weight constraint has mismatched weights");
    }
    for (auto k : c.members) {
      if (k >= model.p()) {
        throw StructuralError("constraint refers to a variable outside the model");
      }
      if (!model.pattern.is_free(k, c.factor)) {
        throw StructuralError("constraint refers to fixed loading (" + std::to_string(k) + ", " +
                              std::to_string(c.factor) + ")");
      }
    }
  }
}

Vector constraint_values(const ConstraintSet& set, const Matrix& lambda,
                         const LoadingPattern& pattern) {
  Vector r(static_cast<Eigen::Index>(set.size()));
  for (std::size_t m = 0; m < set.size(); ++m) {
    const auto& c = set.constraints[m];
    double sum = 0.0;
    for (std::size_t slot = 0; slot < c.members.size(); ++slot) {
      sum += member_weight(set, c, slot, lambda, pattern) * lambda(c.members[slot], c.factor);
    }
    r[static_cast<Eigen::Index>(m)] = sum;
  }
  return r;
}

ConstraintResidual evaluate_constraints(const ConstraintSet& set, const ParameterVector& theta,
                                        const FactorModel& model) {
  const auto params = unpack(model, theta);
  return {constraint_values(set, params.lambda, model.pattern)};
}

Matrix constraint_jacobian(const ConstraintSet& set, const ParameterVector& theta,
                           const FactorModel& model) {
  const ParameterLayout layout(model);
  const auto params = unpack(model, theta);
  const Matrix& lambda = params.lambda;
  Matrix jac = Matrix::Zero(static_cast<Eigen::Index>(set.size()),
                            static_cast<Eigen::Index>(layout.size()));
  for (std::size_t m = 0; m < set.size(); ++m) {
    const auto& c = set.constraints[m];
    const auto row = static_cast<Eigen::Index>(m);
    for (std::size_t slot = 0; slot < c.members.size(); ++slot) {
      const std::size_t k = c.members[slot];
      const double w = member_weight(set, c, slot, lambda, model.pattern);
      if (auto idx = layout.loading_index(k, c.factor)) {
        jac(row, static_cast<Eigen::Index>(*idx)) += w;
      }
      if (set.mode == ConstraintMode::SelfWeighted) {
        const std::size_t sf = model.pattern.salient_factor(k);
        if (auto idx = layout.loading_index(k, sf)) {
          jac(row, static_cast<Eigen::Index>(*idx)) += 2.0 * lambda(k, sf) * lambda(k, c.factor);
        }
      }
    }
  }
  return jac;
}

double buffered_quality_index(const Matrix& lambda_hat, const LoadingPattern& pattern) {
  if (static_cast<std::size_t>(lambda_hat.rows()) != pattern.p() ||
      static_cast<std::size_t>(lambda_hat.cols()) != pattern.q()) {
    throw StructuralError("loading matrix does not match the pattern");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pattern.q(); ++i) {
    const auto members = pattern.block_members(i);
    for (std::size_t j = 0; j < pattern.q(); ++j) {
      if (j == i) continue;
      double sum = 0.0;
      for (auto k : members) {
        sum += lambda_hat(k, i) * lambda_hat(k, j);
      }
      total += std::abs(sum);
    }
  }
  return total;
}

}  // namespace bss
