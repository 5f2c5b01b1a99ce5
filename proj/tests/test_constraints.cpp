#include "bss/constraints.hpp"
#include "bss/simulation.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace bss;

namespace {

const auto kBlocks = LoadingPattern::contiguous_blocks(3, 6);

FactorModel buffered_model() {
  return {LoadingPattern::buffered(kBlocks, 3), PhiSpec::all_free(3)};
}

ModelParameters example_parameters() {
  const Matrix lambda = test::example_lambda();
  const Matrix phi = test::equicorrelated(3, 0.3);
  return {lambda, phi, standardizing_uniqueness(lambda, phi)};
}

}  // namespace

TEST_SUITE("constraints") {

TEST_CASE("one constraint per block and unwanted factor") {
  for (std::size_t q = 2; q <= 5; ++q) {
    const auto pattern = LoadingPattern::buffered(LoadingPattern::contiguous_blocks(q, 2), q);
    CHECK(build_one_step_constraints(pattern).size() == q * (q - 1));
    CHECK(build_fixed_weight_constraints(pattern, Vector::Constant(2 * q, 0.5)).size() ==
          q * (q - 1));
  }
}

TEST_CASE("fixed weights embed the given values") {
  const auto pattern = buffered_model().pattern;
  const auto set = build_fixed_weight_constraints(pattern, Vector::Constant(18, 0.6));
  CHECK(set.mode == ConstraintMode::FixedWeights);
  REQUIRE(set.size() == 6);
  for (const auto& c : set.constraints) {
    CHECK(c.block != c.factor);
    CHECK(c.members.size() == 6);
    for (double w : c.weights) CHECK(w == 0.6);
    for (auto k : c.members) CHECK(pattern.salient_factor(k) == c.block);
  }

  const ParameterVector theta = pack(buffered_model(), example_parameters());
  const Matrix jac = constraint_jacobian(set, theta, buffered_model());
  const ParameterLayout layout(buffered_model());
  for (Eigen::Index r = 0; r < jac.rows(); ++r) {
    const auto& c = set.constraints[static_cast<std::size_t>(r)];
    int nonzero = 0;
    for (Eigen::Index k = 0; k < jac.cols(); ++k) {
      if (jac(r, k) != 0.0) {
        ++nonzero;
        CHECK(jac(r, k) == 0.6);
      }
    }
    CHECK(nonzero == 6);
    CHECK(jac(r, static_cast<Eigen::Index>(*layout.loading_index(c.members[0], c.factor))) == 0.6);
  }
}

TEST_CASE("bad weights are rejected") {
  const auto pattern = buffered_model().pattern;
  CHECK_THROWS_AS(build_fixed_weight_constraints(pattern, Vector::Constant(17, 0.6)),
                  StructuralError);
  CHECK_THROWS_AS(build_fixed_weight_constraints(pattern, Vector::Zero(18)), StructuralError);
  Vector nan = Vector::Constant(18, 0.6);
  nan[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(build_fixed_weight_constraints(pattern, nan), StructuralError);
}

TEST_CASE("residuals of balanced and zero loadings") {
  const FactorModel model = buffered_model();
  const auto one_step = build_one_step_constraints(model.pattern);
  const auto fixed = build_fixed_weight_constraints(model.pattern, Vector::Constant(18, 0.6));

  const ParameterVector population = pack(model, example_parameters());
  CHECK(evaluate_constraints(one_step, population, model).max_abs() < 1e-15);
  CHECK(evaluate_constraints(fixed, population, model).max_abs() < 1e-15);

  ModelParameters icm = example_parameters();
  for (std::size_t k = 0; k < 18; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      if (j != kBlocks[k]) icm.lambda(k, j) = 0.0;
  CHECK(evaluate_constraints(one_step, pack(model, icm), model).max_abs() == 0.0);
  CHECK(evaluate_constraints(fixed, pack(model, icm), model).max_abs() == 0.0);
}

TEST_CASE("self-weighted pair cancels") {
  // Block of two with salient .6 and non-salient (.1, -.1): 1.36·.1 − 1.36·.1.
  const auto pattern = LoadingPattern::buffered({0, 0, 1, 1}, 2);
  Matrix lambda(4, 2);
  lambda << 0.6, 0.1, 0.6, -0.1, 0.0, 0.7, 0.0, 0.7;
  const Vector r = constraint_values(build_one_step_constraints(pattern), lambda, pattern);
  CHECK(r[0] == doctest::Approx(0.0));
  CHECK(std::abs(r[0]) < 1e-16);
}

TEST_CASE("misplaced membership breaks the balance") {
  const FactorModel model = buffered_model();
  auto set = build_fixed_weight_constraints(model.pattern, Vector::Constant(18, 0.6));
  set = swap_members(set, 4, 5);
  set = swap_members(set, 4, 9);
  const ParameterVector population = pack(model, example_parameters());
  const auto r = evaluate_constraints(set, population, model);
  CHECK(r.max_abs() > 0.1);

  // Oracle: x10 now sits in block F1's constraint on F2. Members x1..x4, x10, x6
  // give .6·(.15·3 − .15 + .6 − .15) on F2 since x10's F2 loading is salient.
  const auto& f1_on_f2 = set.constraints[0];
  REQUIRE(f1_on_f2.block == 0);
  REQUIRE(f1_on_f2.factor == 1);
  double by_hand = 0.0;
  const Matrix lambda = test::example_lambda();
  for (auto k : f1_on_f2.members) by_hand += 0.6 * lambda(k, 1);
  CHECK(r.values[0] == doctest::Approx(by_hand).epsilon(1e-14));
  CHECK(by_hand == doctest::Approx(0.6 * (0.15 * 3 - 0.15 + 0.6 - 0.15)).epsilon(1e-14));
}

TEST_CASE("swap of a variable with itself is the identity") {
  const auto set = build_one_step_constraints(buffered_model().pattern);
  CHECK(swap_members(set, 3, 3) == set);
}

TEST_CASE("jacobian matches central differences at random points") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  const FactorModel model = buffered_model();
  const ParameterLayout layout(model);
  const auto one_step = build_one_step_constraints(model.pattern);
  Vector w(18);
  for (auto& x : w) x = u(rng);
  const auto fixed = build_fixed_weight_constraints(model.pattern, w);

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector x(static_cast<Eigen::Index>(layout.size()));
    for (auto& v : x) v = u(rng);
    x.tail(18).array() = x.tail(18).array().abs() + 0.1;
    for (const auto* set : {&one_step, &fixed}) {
      const Matrix jac = constraint_jacobian(*set, ParameterVector{x}, model);
      for (Eigen::Index r = 0; r < jac.rows(); ++r) {
        auto f = [&](const Vector& y) {
          return evaluate_constraints(*set, ParameterVector{y}, model).values[r];
        };
        worst = std::max(worst, (test::central_gradient(f, x) - jac.row(r).transpose())
                                    .cwiseAbs()
                                    .maxCoeff());
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("self-weighted derivative with respect to the salient loading") {
  const auto pattern = LoadingPattern::buffered({0, 0, 1, 1}, 2);
  const FactorModel model{pattern, PhiSpec::all_free(2)};
  Matrix lambda(4, 2);
  lambda << 0.6, 0.1, 0.5, 0.2, 0.3, 0.7, 0.1, 0.7;
  const ParameterVector theta = pack(model, {lambda, test::equicorrelated(2, 0.1), Vector::Ones(4)});
  const Matrix jac = constraint_jacobian(build_one_step_constraints(pattern), theta, model);
  const ParameterLayout layout(model);
  const auto s = static_cast<Eigen::Index>(*layout.loading_index(0, 0));
  const auto n = static_cast<Eigen::Index>(*layout.loading_index(0, 1));
  CHECK(jac(0, s) == doctest::Approx(0.12).epsilon(1e-14));
  CHECK(jac(0, n) == doctest::Approx(1.36).epsilon(1e-14));
}

TEST_CASE("jacobian has full row rank at generic points") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  const FactorModel model = buffered_model();
  const auto set = build_one_step_constraints(model.pattern);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(static_cast<Eigen::Index>(ParameterLayout(model).size()));
    for (auto& v : x) v = u(rng);
    const Matrix jac = constraint_jacobian(set, ParameterVector{x}, model);
    Eigen::JacobiSVD<Matrix> svd(jac);
    CHECK(svd.rank() == 6);
    CHECK(svd.singularValues().minCoeff() > 1e-3);
  }
}

TEST_CASE("quality index") {
  const auto pattern = LoadingPattern::buffered(kBlocks, 3);
  CHECK(buffered_quality_index(test::example_lambda(), pattern) < 1e-15);

  const auto small = LoadingPattern::buffered({0, 0, 1, 1}, 2);
  Matrix same(4, 2), opposite(4, 2);
  same << 0.6, 0.15, 0.6, 0.15, 0.0, 0.6, 0.0, 0.6;
  opposite << 0.6, 0.15, 0.6, -0.15, 0.0, 0.6, 0.0, 0.6;
  CHECK(buffered_quality_index(same, small) == doctest::Approx(0.18).epsilon(1e-14));
  CHECK(buffered_quality_index(opposite, small) == 0.0);

  for (double l : {0.6, 0.8})
    for (double anl : {0.0, 0.05, 0.1, 0.15, 0.2})
      for (double phi : {0.0, 0.3})
        CHECK(buffered_quality_index(balanced_population(3, 6, l, anl, phi).lambda, pattern) <
              1e-12);
}

TEST_CASE("constraints must refer to free cells") {
  const FactorModel icm{LoadingPattern::independent_clusters(kBlocks, 3), PhiSpec::all_free(3)};
  const auto set = build_one_step_constraints(LoadingPattern::buffered(kBlocks, 3));
  CHECK_THROWS_AS(check_constraints(set, icm), StructuralError);
  CHECK_NOTHROW(check_constraints(set, buffered_model()));
}

}  // TEST_SUITE
