#pragma once

#include "bss/estimator.hpp"
#include "bss/model.hpp"

#include <functional>
#include <random>

namespace test {

using bss::Matrix;
using bss::Vector;

// Population loadings of the three-factor example, typed in row by row.
inline Matrix example_lambda() {
  const double l = 0.6, a = 0.15;
  Matrix m(18, 3);
  m << l, a, -a,  l, a, -a,  l, a, -a,
       l, -a, a,  l, -a, a,  l, -a, a,
       -a, l, a,  -a, l, a,  -a, l, a,
       a, l, -a,  a, l, -a,  a, l, -a,
       -a, a, l,  -a, a, l,  -a, a, l,
       a, -a, l,  a, -a, l,  a, -a, l;
  return m;
}

inline Matrix equicorrelated(int q, double r) {
  Matrix m = Matrix::Constant(q, q, r);
  m.diagonal().setOnes();
  return m;
}

// Σ of the example population, built without the library's generator.
inline Matrix example_sigma() {
  const Matrix lambda = example_lambda();
  Matrix s = lambda * equicorrelated(3, 0.3) * lambda.transpose();
  s.diagonal().setOnes();
  return s;
}

inline bss::SampleMoments moments(const Matrix& s, std::optional<double> n = std::nullopt) {
  bss::SampleMoments m;
  m.s = s;
  m.n = n;
  return m;
}

// Central differences of a scalar function.
inline Vector central_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                               double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector a = x, b = x;
    a[k] += h;
    b[k] -= h;
    g[k] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline Matrix random_spd(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Matrix a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = z(rng);
  return a * a.transpose() / p + Matrix::Identity(p, p);
}

}  // namespace test
