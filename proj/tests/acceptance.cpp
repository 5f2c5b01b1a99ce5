// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: bss_acceptance <project dir>

#include "bss/constraints.hpp"
#include "bss/fit_metrics.hpp"
#include "bss/io.hpp"
#include "bss/procedures.hpp"
#include "bss/simulation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace bss;
namespace fs = std::filesystem;

namespace {

// Tolerances, pinned.
constexpr double kIcmSalientLo = 0.590, kIcmSalientHi = 0.600;
constexpr double kIcmPhiLo = 0.299, kIcmPhiHi = 0.309;
constexpr double kIcmSrmrLo = 0.068, kIcmSrmrHi = 0.078;
constexpr double kIcmSeconds = 5.0;

constexpr double kOneStepSrmrMax = 0.01;
constexpr double kOneStepSalient = 0.600, kOneStepNonsalient = 0.149, kOneStepPhi = 0.304;
constexpr double kOneStepTol = 0.01;
constexpr double kOneStepSeconds = 30.0;

constexpr double kStep1Salient = 0.595, kStep2Salient = 0.600, kStepTol = 0.005;
constexpr double kWeightGap = 1e-4;

constexpr double kMisplacedSrmrLo = 0.125, kMisplacedSrmrHi = 0.155;

constexpr double kRmseaALo = 0.0599, kRmseaAHi = 0.0609;
constexpr double kRmseaBLo = 0.113, kRmseaBHi = 0.115;

constexpr double kSimEqualGap = 0.20;      // (a) relative difference at anl = 0
constexpr double kSimIcmExcess = 0.50;     // (b) ICM over buffered at anl = .2
constexpr double kSimRmseaCut = 0.05;      // (c)
constexpr double kSimSeconds = 30 * 60.0;

constexpr double kGradientTol = 1e-6;
constexpr int kGradientPoints = 100;
constexpr double kNestingSlack = 1e-9;
constexpr double kRecoveryF = 1e-8, kRecoveryParam = 1e-3;
constexpr double kQualityZero = 1e-12;

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void note(const std::string& text) {
  std::printf("     %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<std::size_t> kBlocks = LoadingPattern::contiguous_blocks(3, 6);

std::pair<double, double> salient_range(const LoadingPattern& pattern, const Matrix& lambda) {
  const Vector s = salient_estimates(pattern, lambda);
  return {s.minCoeff(), s.maxCoeff()};
}

std::pair<double, double> off_diagonal_range(const Matrix& phi) {
  double lo = 1e300, hi = -1e300;
  for (Eigen::Index i = 0; i < phi.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      lo = std::min(lo, phi(i, j));
      hi = std::max(hi, phi(i, j));
    }
  return {lo, hi};
}

io::ModelSpecDocument model_doc(const fs::path& root, const char* name) {
  return io::load_model_spec(root / "models" / name);
}

void criterion1(const fs::path& root, const SampleMoments& population) {
  const auto doc = model_doc(root, "icm.bss");
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = io::run_model_spec(doc, population);
  const double secs = seconds_since(t0);
  const auto& step = trace.final_step();
  const auto [slo, shi] = salient_range(step.model.pattern, step.solution.lambda_hat);
  const auto [plo, phi] = off_diagonal_range(step.solution.phi_hat);
  const double srmr = step.fit.srmr;
  const bool pass = trace.converged && slo >= kIcmSalientLo && shi <= kIcmSalientHi &&
                    plo >= kIcmPhiLo && phi <= kIcmPhiHi && srmr >= kIcmSrmrLo &&
                    srmr <= kIcmSrmrHi && secs < kIcmSeconds;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "ICM salients [%.4f, %.4f], phi [%.4f, %.4f], SRMR %.4f, %.2f s", slo, shi, plo,
                phi, srmr, secs);
  report(1, pass, buf);
}

void criterion2(const fs::path& root, const SampleMoments& population) {
  const auto doc = model_doc(root, "one_step.bss");
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = io::run_model_spec(doc, population);
  const double secs = seconds_since(t0);
  const auto& sol = trace.final_step().solution;
  const LoadingPattern& pattern = trace.final_step().model.pattern;
  double sal_err = 0.0, non_err = 0.0;
  for (std::size_t k = 0; k < 18; ++k)
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = sol.lambda_hat(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      if (pattern.salient_factor(k) == j)
        sal_err = std::max(sal_err, std::abs(v - kOneStepSalient));
      else
        non_err = std::max(non_err, std::abs(std::abs(v) - kOneStepNonsalient));
    }
  const auto [plo, phi] = off_diagonal_range(sol.phi_hat);
  const double phi_err = std::max(std::abs(plo - kOneStepPhi), std::abs(phi - kOneStepPhi));
  const double srmr = trace.final_step().fit.srmr;
  const bool pass = trace.converged && srmr <= kOneStepSrmrMax && sal_err <= kOneStepTol &&
                    non_err <= kOneStepTol && phi_err <= kOneStepTol && secs < kOneStepSeconds;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "one-step SRMR %.4f, max |salient - .600| %.4f, max ||non-salient| - .149| %.4f, "
                "max |phi - .304| %.4f, %.2f s",
                srmr, sal_err, non_err, phi_err, secs);
  report(2, pass, buf);
}

void criterion3(const fs::path& root, const SampleMoments& population) {
  const auto doc = model_doc(root, "multi_step.bss");
  const auto trace = io::run_model_spec(doc, population);
  bool pass = trace.converged && trace.steps.size() == 3;
  std::string detail = std::to_string(trace.steps.size()) + " models";
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& step = trace.steps[k];
    const auto [lo, hi] = salient_range(step.model.pattern, step.solution.lambda_hat);
    char buf[160];
    std::snprintf(buf, sizeof buf, "; %s salients [%.4f, %.4f]", step.label.c_str(), lo, hi);
    detail += buf;
    if (step.weight_gap) detail += fmt(" gap %.2g", *step.weight_gap);
    const double target = k == 0 ? kStep1Salient : kStep2Salient;
    if (k < 2 && (std::abs(lo - target) > kStepTol || std::abs(hi - target) > kStepTol))
      pass = false;
  }
  if (trace.steps.size() >= 3 && !(*trace.steps[2].weight_gap < kWeightGap)) pass = false;
  report(3, pass, detail);
}

void criterion4(const fs::path& root, const SampleMoments& population) {
  const auto doc = model_doc(root, "misplaced.bss");
  const auto trace = io::run_model_spec(doc, population);
  const double srmr = trace.final_step().fit.srmr;
  report(4, trace.converged && srmr >= kMisplacedSrmrLo && srmr <= kMisplacedSrmrHi,
         "swaps x5<->x6 and x5<->x10 with phi fixed at .304: SRMR " + fmt("%.4f", srmr) +
             " (band [.125, .155])");

  // For reference: the exchange of x5 and x6 with members of the second block.
  MultiStepOptions ms;
  ms.initial_weights = Vector::Constant(18, 0.6);
  ms.weight_tolerance = 1.0;
  ms.max_rounds = 1;
  ms.member_swaps = {{4, 6}, {5, 7}};
  const auto other = multi_step(LoadingPattern::independent_clusters(kBlocks, 3),
                                PhiSpec::all_fixed(3, 0.304), population, {}, ms);
  note("reference: swaps x5<->x7 and x6<->x8 give SRMR " + fmt("%.4f", other.final_step().fit.srmr));
}

void criterion5() {
  const auto thirty = LoadingPattern::contiguous_blocks(5, 6);
  const FactorModel icm{LoadingPattern::independent_clusters(thirty, 5), PhiSpec::all_free(5)};
  const FactorModel five{LoadingPattern::buffered(thirty, 5), PhiSpec::all_free(5)};
  const auto twenty = build_one_step_constraints(five.pattern);
  const FactorModel three{LoadingPattern::buffered(kBlocks, 3), PhiSpec::all_free(3)};
  const auto six = build_one_step_constraints(three.pattern);
  const int a = degrees_of_freedom(icm, nullptr);
  const int b = degrees_of_freedom(five, &twenty);
  const int c = degrees_of_freedom(three, &six);
  const int exploratory = ((18 - 3) * (18 - 3) - (18 + 3)) / 2;
  char buf[200];
  std::snprintf(buf, sizeof buf, "df %d, %d (%zu constraints), %d (exploratory %d)", a, b,
                twenty.size(), c, exploratory);
  report(5, a == 395 && b == 295 && twenty.size() == 20 && c == 102 && c == exploratory, buf);
}

void criterion6() {
  const double a = rmsea(925.17, 295, 587);
  const double b = rmsea(3430.07, 395, 587);
  char buf[120];
  std::snprintf(buf, sizeof buf, "RMSEA %.5f and %.5f", a, b);
  report(6, a >= kRmseaALo && a <= kRmseaAHi && b >= kRmseaBLo && b <= kRmseaBHi, buf);
}

void criterion7(const fs::path& root) {
  const GridSpec grid = io::load_grid_spec(root / "grids" / "desk.grid");
  const auto t0 = std::chrono::steady_clock::now();
  const GridResult result = run_grid(grid, {}, 0);
  const double secs = seconds_since(t0);

  bool a = true, b = true, c = true;
  bool a_salient = true, b_salient = true;
  for (const auto& cell : result.cells) {
    const double icm = cell.icm.loading_rmsd.mean;
    const double buf = cell.buffered.loading_rmsd.mean;
    const double icm_s = cell.icm.salient_rmsd.mean;
    const double buf_s = cell.buffered.salient_rmsd.mean;
    char line[320];
    std::snprintf(line, sizeof line,
                  "anl %.2f n %d: RMSD icm %.4f buffered %.4f | salient-only icm %.4f buffered "
                  "%.4f | RMSEA icm %.4f buffered %.4f | excluded %d/%d",
                  cell.at.nonsalient, cell.at.n, icm, buf, icm_s, buf_s, cell.icm.rmsea.mean,
                  cell.buffered.rmsea.mean, cell.icm.excluded, cell.buffered.excluded);
    note(line);
    auto rel = [](double x, double y) { return std::abs(x - y) / std::min(x, y); };
    if (cell.at.nonsalient == 0.0) {
      a = a && rel(icm, buf) < kSimEqualGap;
      a_salient = a_salient && rel(icm_s, buf_s) < kSimEqualGap;
    }
    if (std::abs(cell.at.nonsalient - 0.2) < 1e-12) {
      b = b && icm >= (1 + kSimIcmExcess) * buf;
      b_salient = b_salient && icm_s >= (1 + kSimIcmExcess) * buf_s;
    }
    c = c && cell.buffered.rmsea.mean < kSimRmseaCut;
    if (cell.at.nonsalient >= 0.1 - 1e-12) c = c && cell.icm.rmsea.mean > kSimRmseaCut;
  }
  note(std::string("salient-only RMSD for reference: (a) ") + (a_salient ? "holds" : "fails") +
       ", (b) " + (b_salient ? "holds" : "fails"));
  char buf[200];
  std::snprintf(buf, sizeof buf, "desk grid %zu cells x %d reps: (a) %s (b) %s (c) %s, %.1f s",
                result.cells.size(), grid.replications, a ? "ok" : "FAIL", b ? "ok" : "FAIL",
                c ? "ok" : "FAIL", secs);
  report(7, a && b && c && secs < kSimSeconds, buf);
}

Vector central_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  const double h = 1e-6;
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector p = x, m = x;
    p[k] += h;
    m[k] -= h;
    g[k] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

Matrix equicorrelated(int q, double r) {
  Matrix m = Matrix::Constant(q, q, r);
  m.diagonal().setOnes();
  return m;
}

void criterion8() {
  std::vector<std::string> broken;
  std::mt19937_64 rng(8);

  // Gradient against central differences.
  {
    const FactorModel model{LoadingPattern::buffered(kBlocks, 3), PhiSpec::all_free(3)};
    const ParameterLayout layout(model);
    std::uniform_real_distribution<double> u(-0.8, 0.8), pos(0.3, 1.2);
    const Matrix s = balanced_population(3, 6, 0.6, 0.15, 0.3).sigma;
    double worst = 0.0;
    for (int trial = 0; trial < kGradientPoints; ++trial) {
      Vector x(static_cast<Eigen::Index>(layout.size()));
      for (std::size_t k = 0; k < layout.loading_count(); ++k) x[static_cast<Eigen::Index>(k)] = u(rng);
      for (std::size_t k = 0; k < layout.phi_count(); ++k)
        x[static_cast<Eigen::Index>(layout.loading_count() + k)] = 0.3 * u(rng);
      for (std::size_t k = 0; k < model.p(); ++k)
        x[static_cast<Eigen::Index>(layout.psi_index(k))] = pos(rng);
      auto f = [&](const Vector& y) {
        return ml_discrepancy(s, implied_covariance(unpack(model, ParameterVector{y})));
      };
      const Vector g = ml_gradient(model, ParameterVector{x}, s);
      worst = std::max(worst, (central_gradient(f, x) - g).cwiseAbs().maxCoeff());
    }
    note("gradient: max abs error " + fmt("%.2e", worst) + " over 100 points");
    if (!(worst < kGradientTol)) broken.push_back("gradient");
  }

  // Nesting with matched fixed Φ.
  {
    bool ok = true;
    double worst = -1e300;
    for (int trial = 0; trial < 4; ++trial) {
      const PopulationModel pop = balanced_population(3, 6, 0.6, 0.05 * trial, 0.3);
      const Sample sample = draw_sample(pop.sigma, 300, rng());
      const Matrix phi = equicorrelated(3, 0.25);
      const FactorModel icm{LoadingPattern::independent_clusters(kBlocks, 3), PhiSpec::fixed_at(phi)};
      const FactorModel buffered{LoadingPattern::buffered(kBlocks, 3), PhiSpec::fixed_at(phi)};
      const Solution a = fit(icm, sample.moments);
      const auto cs = build_fixed_weight_constraints(buffered.pattern, Vector::Constant(18, 0.6));
      const Solution b = fit(buffered, &cs, sample.moments);
      ok = ok && a.converged && b.converged && b.f_min <= a.f_min + kNestingSlack;
      worst = std::max(worst, b.f_min - a.f_min);
    }
    note("nesting: max f(buffered) - f(ICM) " + fmt("%.3e", worst));
    if (!ok) broken.push_back("nesting");
  }

  // Exact recovery of feasible populations.
  {
    bool ok = true;
    double worst_f = 0.0, worst_p = 0.0;
    for (double anl : {0.0, 0.1, 0.2})
      for (double phi_value : {0.0, 0.3}) {
        const PopulationModel pop = balanced_population(3, 6, 0.7, anl, phi_value);
        const FactorModel model{LoadingPattern::buffered(kBlocks, 3), PhiSpec::all_free(3)};
        const auto cs = build_one_step_constraints(model.pattern);
        SampleMoments m;
        m.s = pop.sigma;
        const Solution sol = fit(model, &cs, m);
        Matrix lambda = sol.lambda_hat, phi = sol.phi_hat;
        align_to_population(lambda, phi, pop.lambda);
        const double err = std::max((lambda - pop.lambda).cwiseAbs().maxCoeff(),
                                    (phi - pop.phi).cwiseAbs().maxCoeff());
        worst_f = std::max(worst_f, sol.f_min);
        worst_p = std::max(worst_p, err);
        ok = ok && sol.converged && sol.f_min < kRecoveryF && err < kRecoveryParam;
      }
    note("recovery: max f " + fmt("%.2e", worst_f) + ", max parameter error " + fmt("%.2e", worst_p));
    if (!ok) broken.push_back("recovery");
  }

  // Quality index on every design population.
  {
    const GridSpec full;
    const auto pattern = LoadingPattern::buffered(kBlocks, 3);
    double worst = 0.0;
    for (const auto& at : grid_cells(full))
      worst = std::max(worst, buffered_quality_index(
                                  balanced_population(3, 6, at.salient, at.nonsalient, at.phi).lambda,
                                  pattern));
    note("quality index: max " + fmt("%.2e", worst) + " over the design populations");
    if (!(worst < kQualityZero)) broken.push_back("quality index");
  }

  // Replay of a small grid.
  {
    GridSpec g;
    g.salient = {0.6};
    g.nonsalient = {0.0, 0.2};
    g.phi = {0.0, 0.3};
    g.n = {200};
    g.replications = 3;
    g.seed = 99;
    const GridResult first = run_grid(g, {}, 1);
    const GridResult second = run_grid(g, {}, 0);
    bool same = first.records.size() == second.records.size();
    for (std::size_t k = 0; same && k < first.records.size(); ++k)
      same = first.records[k].seed == second.records[k].seed &&
             first.records[k].loading_rmsd == second.records[k].loading_rmsd &&
             first.records[k].f_min == second.records[k].f_min;
    note(std::string("replay: ") + (same ? "identical" : "differs"));
    if (!same) broken.push_back("replay");
  }

  std::string detail = "property suite";
  if (!broken.empty()) {
    detail += ", broken:";
    for (const auto& b : broken) detail += " " + b;
  }
  report(8, broken.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <project dir>\n", argv[0]);
    return 2;
  }
  const fs::path root = argv[1];
  try {
    const SampleMoments population =
        io::read_correlation_matrix(root / "data" / "example_population.cor");
    criterion1(root, population);
    criterion2(root, population);
    criterion3(root, population);
    criterion4(root, population);
    criterion5();
    criterion6();
    criterion7(root);
    criterion8();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d of 8 criteria failed\n", failures);
  return failures ? 1 : 0;
}
