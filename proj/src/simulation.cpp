#include "bss/simulation.hpp"

#include "bss/fit_metrics.hpp"
#include "bss/procedures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace bss {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sign of the non-salient loadings of the first half of block i on factor j.
/// Reproduces the three-factor layout (+,− / −,+ / −,+) and alternates along
/// the unwanted factors for larger q.
double first_half_sign(std::size_t block, std::size_t factor) {
  const std::size_t rank = factor < block ? factor : factor - 1;  // position among unwanted
  const bool start_positive = block == 0;
  const bool even = rank % 2 == 0;
  return (even == start_positive) ? 1.0 : -1.0;
}

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

}  // namespace

void validate_grid(const GridSpec& grid) {
  if (grid.salient.empty() || grid.nonsalient.empty() || grid.phi.empty() || grid.n.empty()) {
    throw std::invalid_argument("grid dimensions must be non-empty");
  }
  if (grid.factors < 2 || grid.per_factor < 1) {
    throw std::invalid_argument("grid needs at least two factors and one variable per factor");
  }
  if (grid.replications < 1) {
    throw std::invalid_argument("grid needs at least one replication");
  }
  const auto p = static_cast<int>(grid.factors * grid.per_factor);
  for (int n : grid.n) {
    if (n <= p) throw std::invalid_argument("sample size must exceed the number of variables");
  }
  for (double l : grid.salient) {
    for (double anl : grid.nonsalient) {
      if (anl != 0.0 && grid.per_factor % 2 != 0) {
        throw std::invalid_argument("balanced non-salient loadings need an even block size");
      }
      for (double phi : grid.phi) {
        (void)balanced_population(grid.factors, grid.per_factor, l, anl, phi);
      }
    }
  }
}

PopulationModel balanced_population(std::size_t q, std::size_t per_factor, double l, double anl,
                                    double phi_value) {
  if (anl != 0.0 && per_factor % 2 != 0) {
    throw std::invalid_argument("balanced non-salient loadings need an even block size");
  }
  const std::size_t p = q * per_factor;
  Matrix lambda = Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
  for (std::size_t block = 0; block < q; ++block) {
    for (std::size_t r = 0; r < per_factor; ++r) {
      const auto var = static_cast<Eigen::Index>(block * per_factor + r);
      const double half = r < per_factor / 2 ? 1.0 : -1.0;
      for (std::size_t j = 0; j < q; ++j) {
        lambda(var, static_cast<Eigen::Index>(j)) =
            j == block ? l : half * first_half_sign(block, j) * anl;
      }
    }
  }
  Matrix phi = Matrix::Constant(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q),
                                phi_value);
  phi.diagonal().setOnes();
  return PopulationModel::standardized(lambda, phi);
}

Matrix correlation_matrix(const Matrix& data) {
  const Eigen::Index n = data.rows();
  const Matrix centered = data.rowwise() - data.colwise().mean();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const Vector inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Matrix r = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  return r;
}

Sample draw_sample(const Matrix& sigma, int n, std::uint64_t seed) {
  const Eigen::LLT<Matrix> llt(sigma);
  if (sigma.rows() != sigma.cols() || llt.info() != Eigen::Success) {
    throw NumericalError("sampling covariance is not positive definite");
  }
  if (n <= sigma.rows()) {
    throw std::invalid_argument("sample size must exceed the number of variables");
  }
  const Eigen::Index p = sigma.rows();
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      z(i, j) = normal(rng);
    }
  }
  Sample out;
  out.data = z * llt.matrixL().transpose();
  out.moments.s = correlation_matrix(out.data);
  out.moments.n = static_cast<double>(n);
  return out;
}

double rmsd(const Matrix& estimated, const Matrix& population,
            const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (estimated.rows() != population.rows() || estimated.cols() != population.cols() ||
      mask.rows() != estimated.rows() || mask.cols() != estimated.cols()) {
    throw StructuralError("rmsd: matrices and mask are not conformable");
  }
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (mask(i, j)) {
        const double d = estimated(i, j) - population(i, j);
        sum += d * d;
        ++count;
      }
    }
  }
  if (count == 0) {
    throw std::invalid_argument("rmsd: empty mask");
  }
  return std::sqrt(sum / static_cast<double>(count));
}

void align_to_population(Matrix& lambda, Matrix& phi, const Matrix& population_lambda) {
  const Eigen::Index q = lambda.cols();
  Matrix congruence(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index b = 0; b < q; ++b) {
      const double denom = std::sqrt(lambda.col(a).squaredNorm() *
                                     population_lambda.col(b).squaredNorm());
      congruence(a, b) = denom > 0.0 ? lambda.col(a).dot(population_lambda.col(b)) / denom : 0.0;
    }
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(q));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<Eigen::Index> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (Eigen::Index b = 0; b < q; ++b) score += std::abs(congruence(perm[b], b));
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  Matrix l2(lambda.rows(), q);
  Vector sign(q);
  for (Eigen::Index b = 0; b < q; ++b) {
    sign[b] = congruence(best[b], b) < 0.0 ? -1.0 : 1.0;
    l2.col(b) = sign[b] * lambda.col(best[b]);
  }
  Matrix p2(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index b = 0; b < q; ++b) {
      p2(a, b) = sign[a] * sign[b] * phi(best[a], best[b]);
    }
  }
  lambda = std::move(l2);
  phi = std::move(p2);
}

std::uint64_t replication_seed(std::uint64_t master, std::size_t cell, int replication) {
  return splitmix64(splitmix64(splitmix64(master) ^ cell) ^ static_cast<std::uint64_t>(replication));
}

std::vector<CellCoordinates> grid_cells(const GridSpec& grid) {
  std::vector<CellCoordinates> out;
  for (double l : grid.salient) {
    for (double anl : grid.nonsalient) {
      for (double phi : grid.phi) {
        for (int n : grid.n) {
          out.push_back({l, anl, phi, n});
        }
      }
    }
  }
  return out;
}

GridResult run_grid(const GridSpec& grid, const FitOptions& options, unsigned threads) {
  validate_grid(grid);
  const auto cells = grid_cells(grid);
  const std::size_t q = grid.factors;
  const std::size_t per = grid.per_factor;
  const auto blocks = LoadingPattern::contiguous_blocks(q, per);
  const LoadingPattern pattern = LoadingPattern::independent_clusters(blocks, q);
  const std::size_t p = q * per;

  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> all_cells =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(p, q, true);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> salient_cells =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(p, q, false);
  for (std::size_t k = 0; k < p; ++k) salient_cells(k, blocks[k]) = true;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> lower =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(q, q, false);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < i; ++j) lower(i, j) = true;
  }

  std::vector<PopulationModel> populations;
  populations.reserve(cells.size());
  for (const auto& c : cells) {
    populations.push_back(balanced_population(q, per, c.salient, c.nonsalient, c.phi));
  }

  const std::size_t reps = static_cast<std::size_t>(grid.replications);
  const std::size_t tasks = cells.size() * reps;
  std::vector<ReplicationRecord> records(2 * tasks);

  auto run_task = [&](std::size_t task) {
    const std::size_t cell = task / reps;
    const int rep = static_cast<int>(task % reps);
    const auto& at = cells[cell];
    const auto& pop = populations[cell];
    const std::uint64_t seed = replication_seed(grid.seed, cell, rep);
    const Sample sample = draw_sample(pop.sigma, at.n, seed);
    const PhiSpec phi_spec = at.phi == 0.0 ? PhiSpec::all_fixed(q, 0.0) : PhiSpec::all_free(q);

    FitOptions fo = options;
    fo.seed = seed;
    const ProcedureTrace traces[2] = {icm(pattern, phi_spec, sample.moments, fo),
                                      one_step(pattern, phi_spec, sample.moments, fo)};
    for (int m = 0; m < 2; ++m) {
      const auto& step = traces[m].final_step();
      ReplicationRecord rec;
      rec.cell = cell;
      rec.replication = rep;
      rec.seed = seed;
      rec.method = m == 0 ? Estimation::Icm : Estimation::Buffered;
      rec.converged = step.solution.converged;
      Matrix lambda = step.solution.lambda_hat;
      Matrix phi = step.solution.phi_hat;
      align_to_population(lambda, phi, pop.lambda);
      rec.loading_rmsd = rmsd(lambda, pop.lambda, all_cells);
      rec.salient_rmsd = rmsd(lambda, pop.lambda, salient_cells);
      rec.phi_rmsd = rmsd(phi, pop.phi, lower);
      rec.rmsea = step.fit.rmsea.value_or(0.0);
      rec.f_min = step.solution.f_min;
      records[2 * task + static_cast<std::size_t>(m)] = rec;
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < tasks; t = next++) run_task(t);
      });
    }
    for (auto& th : pool) th.join();
  }

  GridResult result;
  result.records = std::move(records);
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    CellSummary summary;
    summary.cell = cell;
    summary.at = cells[cell];
    summary.replications = grid.replications;
    for (int m = 0; m < 2; ++m) {
      std::vector<double> loading, salient, phi, fit_rmsea;
      int excluded = 0;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        const auto& rec = result.records[2 * (cell * reps + rep) + static_cast<std::size_t>(m)];
        if (!rec.converged) {
          ++excluded;
          continue;
        }
        loading.push_back(rec.loading_rmsd);
        salient.push_back(rec.salient_rmsd);
        phi.push_back(rec.phi_rmsd);
        fit_rmsea.push_back(rec.rmsea);
      }
      MethodSummary& ms = m == 0 ? summary.icm : summary.buffered;
      ms.loading_rmsd = mean_se(loading);
      ms.salient_rmsd = mean_se(salient);
      ms.phi_rmsd = mean_se(phi);
      ms.rmsea = mean_se(fit_rmsea);
      ms.used = static_cast<int>(loading.size());
      ms.excluded = excluded;
    }
    result.cells.push_back(summary);
  }
  return result;
}

}  // namespace bss
