// Command-line front end: fit, search, simulate, quality, population.
// Exit status: 0 converged, 2 estimation did not converge, 1 bad input.

#include "bss/constraints.hpp"
#include "bss/io.hpp"
#include "bss/simulation.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace bss;

constexpr int kConverged = 0;
constexpr int kInputError = 1;
constexpr int kNotConverged = 2;

SampleMoments load_data(const std::string& path, bool raw, std::optional<double> n) {
  if (raw) {
    auto m = io::read_raw_data(path);
    if (n) m.n = n;
    return m;
  }
  return io::read_correlation_matrix(path, n);
}

int run_fit(io::ModelSpecDocument doc, const std::string& data, bool raw,
            std::optional<double> n, const std::string& out, bool quiet,
            const FitOptions& options) {
  if (!n && doc.n) n = doc.n;
  const SampleMoments moments = io::align_moments(doc, load_data(data, raw, n));
  const ProcedureTrace trace = io::run_model_spec(doc, moments, options);
  const auto result = io::to_result_document(trace, doc.variables, doc.factors);
  if (!out.empty()) io::write_result(result, out);
  if (!quiet) std::cout << io::summary_text(result);
  if (!trace.converged) {
    std::cerr << "estimation did not converge";
    if (!trace.steps.empty()) std::cerr << ": " << trace.final_step().solution.message;
    std::cerr << '\n';
    return kNotConverged;
  }
  return kConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Buffered simple structure factor analysis"};
  app.require_subcommand(1);

  std::string model_path, data_path, out_path, grid_path, records_path, result_path;
  std::optional<double> n;
  bool raw = false, quiet = false;

  auto* fit_cmd = app.add_subcommand("fit", "Estimate the model described by a spec file");
  fit_cmd->add_option("--model", model_path, "Model spec file")->required();
  fit_cmd->add_option("--data", data_path, "Correlation matrix or raw data file")->required();
  fit_cmd->add_flag("--raw", raw, "Data file holds raw observations (header row of names)");
  fit_cmd->add_option("--n", n, "Sample size (overrides the data and model files)");
  fit_cmd->add_option("--out", out_path, "Write the result document here");
  fit_cmd->add_flag("--quiet", quiet, "Do not print the summary");
  FitOptions fit_options;
  fit_cmd->add_option("--max-outer", fit_options.max_outer_iterations, "Outer iteration limit");
  fit_cmd->add_option("--max-inner", fit_options.max_inner_iterations, "Inner iteration limit");
  std::string procedure_override;
  fit_cmd->add_option("--procedure", procedure_override, "Override the model file's procedure")
      ->check(CLI::IsMember({"icm", "one-step", "multi-step", "search"}));

  auto* search_cmd = app.add_subcommand("search", "ICM fit followed by a specification search");
  double threshold = 15.0;
  std::size_t max_per_factor = 3;
  search_cmd->add_option("--model", model_path, "Model spec file")->required();
  search_cmd->add_option("--data", data_path, "Correlation matrix or raw data file")->required();
  search_cmd->add_flag("--raw", raw, "Data file holds raw observations");
  search_cmd->add_option("--n", n, "Sample size");
  search_cmd->add_option("--threshold", threshold, "Modification index threshold")
      ->capture_default_str();
  search_cmd->add_option("--max-per-factor", max_per_factor, "Cells freed per factor at most")
      ->capture_default_str();
  search_cmd->add_option("--out", out_path, "Write the result document here");
  search_cmd->add_flag("--quiet", quiet, "Do not print the summary");

  auto* sim_cmd = app.add_subcommand("simulate", "Run the Monte Carlo grid");
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  sim_cmd->add_option("--grid", grid_path, "Grid spec file (defaults to the full design)");
  sim_cmd->add_option("--reps", reps, "Replications per cell");
  sim_cmd->add_option("--seed", seed, "Master seed");
  sim_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
  sim_cmd->add_option("--out", out_path, "Cell summary CSV")->required();
  sim_cmd->add_option("--records", records_path, "Per-replication CSV");

  auto* quality_cmd = app.add_subcommand("quality", "Buffered quality index of a result file");
  quality_cmd->add_option("--result", result_path, "Result document")->required();

  auto* pop_cmd = app.add_subcommand("population", "Write a balanced population correlation matrix");
  double salient = 0.6, nonsalient = 0.15, phi = 0.3, pop_n = 500;
  std::size_t factors = 3, per_factor = 6;
  pop_cmd->add_option("--salient", salient)->capture_default_str();
  pop_cmd->add_option("--nonsalient", nonsalient)->capture_default_str();
  pop_cmd->add_option("--phi", phi)->capture_default_str();
  pop_cmd->add_option("--factors", factors)->capture_default_str();
  pop_cmd->add_option("--per-factor", per_factor)->capture_default_str();
  pop_cmd->add_option("--n", pop_n, "Sample size recorded in the file")->capture_default_str();
  pop_cmd->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*fit_cmd) {
      auto doc = io::load_model_spec(model_path);
      if (!procedure_override.empty()) doc.procedure = *io::procedure_from_string(procedure_override);
      return run_fit(std::move(doc), data_path, raw, n, out_path, quiet, fit_options);
    }
    if (*search_cmd) {
      auto doc = io::load_model_spec(model_path);
      doc.procedure = io::Procedure::Search;
      doc.mi_threshold = threshold;
      doc.max_freed_per_factor = max_per_factor;
      return run_fit(std::move(doc), data_path, raw, n, out_path, quiet, fit_options);
    }
    if (*sim_cmd) {
      GridSpec grid = grid_path.empty() ? GridSpec{} : io::load_grid_spec(grid_path);
      if (reps) grid.replications = *reps;
      if (seed) grid.seed = *seed;
      validate_grid(grid);
      const GridResult result = run_grid(grid, FitOptions{}, threads);
      io::write_summary_table(result.cells, out_path);
      if (!records_path.empty()) io::write_record_table(result.records, records_path);
      int excluded = 0;
      for (const auto& c : result.cells) excluded += c.icm.excluded + c.buffered.excluded;
      std::cout << result.cells.size() << " cells, " << result.records.size() << " fits, "
                << excluded << " excluded (not converged)\n";
      return kConverged;
    }
    if (*quality_cmd) {
      const auto doc = io::read_result(result_path);
      if (doc.steps.empty()) throw io::InputError("result file has no steps");
      const auto& s = doc.steps.back();
      const auto pattern = LoadingPattern::buffered(s.salient_factor, doc.factors.size());
      std::cout.precision(17);
      std::cout << buffered_quality_index(s.lambda, pattern) << '\n';
      return doc.converged ? kConverged : kNotConverged;
    }
    if (*pop_cmd) {
      const auto pop = balanced_population(factors, per_factor, salient, nonsalient, phi);
      SampleMoments m;
      m.s = pop.sigma;
      m.n = pop_n;
      for (std::size_t i = 0; i < factors * per_factor; ++i) m.names.push_back("x" + std::to_string(i + 1));
      io::write_correlation_matrix(m, out_path);
      return kConverged;
    }
  } catch (const io::SpecError& e) {
    std::cerr << model_path << ":\n" << e.what() << '\n';
    return kInputError;
  } catch (const io::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::domain_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}
