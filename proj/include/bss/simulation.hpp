#pragma once

#include "bss/estimator.hpp"
#include "bss/model.hpp"

#include <cstdint>
#include <vector>

namespace bss {

/// Monte Carlo design: every combination of salient size, non-salient size,
/// interfactor correlation and sample size is one cell.
struct GridSpec {
  std::vector<double> salient{0.6, 0.8};
  std::vector<double> nonsalient{0.0, 0.05, 0.10, 0.15, 0.20};
  std::vector<double> phi{0.0, 0.3};
  std::vector<int> n{150, 300, 900};
  std::size_t factors = 3;
  std::size_t per_factor = 6;
  int replications = 100;
  std::uint64_t seed = 20240611;
};

/// Throws std::invalid_argument describing the first problem found.
void validate_grid(const GridSpec& grid);

struct CellCoordinates {
  double salient = 0.0;
  double nonsalient = 0.0;
  double phi = 0.0;
  int n = 0;
};

enum class Estimation { Icm, Buffered };

struct ReplicationRecord {
  std::size_t cell = 0;
  int replication = 0;
  std::uint64_t seed = 0;
  Estimation method = Estimation::Icm;
  bool converged = false;
  double loading_rmsd = 0.0;   // all p·q loading cells
  double salient_rmsd = 0.0;   // salient cells only
  double phi_rmsd = 0.0;       // strict lower triangle of Φ
  double rmsea = 0.0;
  double f_min = 0.0;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

struct MethodSummary {
  MeanSe loading_rmsd;
  MeanSe salient_rmsd;
  MeanSe phi_rmsd;
  MeanSe rmsea;
  int used = 0;
  int excluded = 0;  // non-converged replications
};

struct CellSummary {
  std::size_t cell = 0;
  CellCoordinates at;
  int replications = 0;
  MethodSummary icm;
  MethodSummary buffered;
};

struct GridResult {
  std::vector<CellSummary> cells;
  std::vector<ReplicationRecord> records;
};

/// Population with `per_factor` salient loadings `l` per factor and balanced
/// ±anl non-salient loadings: within every (block, unwanted factor) the first
/// half of the block carries one sign and the second half the other.
PopulationModel balanced_population(std::size_t q, std::size_t per_factor, double l, double anl,
                                    double phi_value);

struct Sample {
  Matrix data;  // n x p
  SampleMoments moments;
};

/// n multivariate-normal rows with covariance `sigma`, deterministic in
/// (sigma, n, seed); moments hold the sample correlation matrix.
Sample draw_sample(const Matrix& sigma, int n, std::uint64_t seed);

/// Sample correlation matrix of the rows of `data`.
Matrix correlation_matrix(const Matrix& data);

/// sqrt(mean((estimated − population)²)) over the cells where mask is true.
double rmsd(const Matrix& estimated, const Matrix& population,
            const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);

/// Reorders and sign-flips estimated factors to best match the population
/// columns by absolute congruence; Φ is transformed to match.
void align_to_population(Matrix& lambda, Matrix& phi, const Matrix& population_lambda);

/// Seed of one replication, a pure function of its coordinates.
std::uint64_t replication_seed(std::uint64_t master, std::size_t cell, int replication);

std::vector<CellCoordinates> grid_cells(const GridSpec& grid);

/// Runs every cell and replication. `threads` = 0 uses the hardware count;
/// output does not depend on the thread count.
GridResult run_grid(const GridSpec& grid, const FitOptions& options, unsigned threads = 0);

}  // namespace bss
