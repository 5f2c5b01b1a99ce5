#pragma once

#include "bss/estimator.hpp"
#include "bss/procedures.hpp"
#include "bss/simulation.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bss::io {

enum class Procedure { Icm, OneStep, MultiStep, Search };

std::string to_string(Procedure p);
std::optional<Procedure> procedure_from_string(const std::string& s);

/// Text form of a factor model and the procedure to run on it. See
/// docs/formats.md for the grammar.
struct ModelSpecDocument {
  std::vector<std::string> variables;
  std::vector<std::string> factors;
  std::vector<std::vector<std::string>> salient;  // parallel to factors
  /// Keyed by (row, col) factor indices with row > col; missing pairs are free.
  std::map<std::pair<std::size_t, std::size_t>, double> fixed_phi;
  Procedure procedure = Procedure::OneStep;
  double weight_tolerance = 1e-4;
  int max_rounds = 10;
  bool fix_phi_from_icm = true;
  double mi_threshold = 15.0;
  std::size_t max_freed_per_factor = 3;
  std::optional<std::vector<double>> weights;  // variable order
  std::vector<std::pair<std::string, std::string>> swaps;
  std::optional<double> n;

  bool operator==(const ModelSpecDocument&) const = default;
};

struct Diagnostic {
  int line = 0;  // 1-based; 0 for whole-document problems
  std::string code;
  std::string message;
};

class SpecError : public std::runtime_error {
 public:
  explicit SpecError(std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }
  bool has(const std::string& code) const;

 private:
  std::vector<Diagnostic> diagnostics_;
};

/// Throws SpecError listing every problem found.
ModelSpecDocument parse_model_spec(const std::string& text);
/// Canonical text: parse_model_spec(print_model_spec(d)) == d.
std::string print_model_spec(const ModelSpecDocument& doc);
ModelSpecDocument load_model_spec(const std::filesystem::path& path);

FactorModel to_factor_model(const ModelSpecDocument& doc);
std::size_t variable_index(const ModelSpecDocument& doc, const std::string& name);

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reorders `moments` to the document's variable order: by name when every
/// variable is present, otherwise by position when the counts agree.
SampleMoments align_moments(const ModelSpecDocument& doc, const SampleMoments& moments);

/// Runs the document's procedure on moments already in its variable order.
ProcedureTrace run_model_spec(const ModelSpecDocument& doc, const SampleMoments& moments,
                              const FitOptions& options = {});

/// p rows of p numbers (whitespace or comma separated), optionally preceded
/// by `n = <count>` and `names = ...` header lines. `n_override` wins over
/// the header; one of the two is required.
SampleMoments read_correlation_matrix(const std::filesystem::path& path,
                                      std::optional<double> n_override = std::nullopt);
SampleMoments parse_correlation_matrix(const std::string& text,
                                       std::optional<double> n_override = std::nullopt);

/// Header row of variable names, then one observation per row.
SampleMoments read_raw_data(const std::filesystem::path& path);
SampleMoments parse_raw_data(const std::string& text);

void write_correlation_matrix(const SampleMoments& moments, const std::filesystem::path& path);
void write_raw_data(const Matrix& data, const std::vector<std::string>& names,
                    const std::filesystem::path& path);

/// Everything a result file stores about one estimated model.
struct StepRecord {
  std::string label;
  bool converged = false;
  double f_min = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  Matrix lambda;
  Matrix phi;
  Vector psi;
  std::vector<std::size_t> salient_factor;
  Vector constraint_residuals;
  std::optional<Vector> weights;
  std::optional<double> weight_gap;
  FitReport fit;
  double quality_index = 0.0;
};

struct ResultDocument {
  std::string procedure;
  bool converged = false;
  std::vector<std::string> variables;
  std::vector<std::string> factors;
  std::vector<StepRecord> steps;
};

ResultDocument to_result_document(const ProcedureTrace& trace,
                                  const std::vector<std::string>& variables,
                                  const std::vector<std::string>& factors);
std::string result_to_text(const ResultDocument& doc);
ResultDocument result_from_text(const std::string& text);
void write_result(const ResultDocument& doc, const std::filesystem::path& path);
void write_result(const ProcedureTrace& trace, const std::vector<std::string>& variables,
                  const std::vector<std::string>& factors, const std::filesystem::path& path);
ResultDocument read_result(const std::filesystem::path& path);

/// Rounded, human-readable table of the final step.
std::string summary_text(const ResultDocument& doc);

/// Simulation design as `key = values` lines (salient, nonsalient, phi, n,
/// factors, per_factor, replications, seed).
GridSpec parse_grid_spec(const std::string& text);
GridSpec load_grid_spec(const std::filesystem::path& path);

/// Column order of the cell summary table.
const std::vector<std::string>& summary_columns();
const std::vector<std::string>& record_columns();
std::string summary_table(const std::vector<CellSummary>& cells);
std::string record_table(const std::vector<ReplicationRecord>& records);
void write_summary_table(const std::vector<CellSummary>& cells, const std::filesystem::path& path);
void write_record_table(const std::vector<ReplicationRecord>& records,
                        const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace bss::io
