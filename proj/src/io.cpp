#include "bss/io.hpp"

#include "bss/constraints.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace bss::io {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  const auto h = line.find('#');
  return trim(h == std::string::npos ? line : line.substr(0, h));
}

// Splits on whitespace and commas.
std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<double> to_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long long> to_integer(const std::string& s) {
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// "x1-x18" expands to x1 … x18 when both ends share a prefix.
std::optional<std::vector<std::string>> expand_range(const std::string& tok) {
  const auto dash = tok.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == tok.size()) return std::nullopt;
  auto split = [](const std::string& s) -> std::optional<std::pair<std::string, long long>> {
    std::size_t k = s.size();
    while (k > 0 && std::isdigit(static_cast<unsigned char>(s[k - 1]))) --k;
    if (k == s.size() || k == 0) return std::nullopt;
    return std::make_pair(s.substr(0, k), std::stoll(s.substr(k)));
  };
  const auto a = split(tok.substr(0, dash));
  const auto b = split(tok.substr(dash + 1));
  if (!a || !b || a->first != b->first || b->second < a->second) return std::nullopt;
  std::vector<std::string> out;
  for (long long i = a->second; i <= b->second; ++i) out.push_back(a->first + std::to_string(i));
  return out;
}

struct Line {
  int number;
  std::string key;     // first word(s) before '='
  std::vector<std::string> head;  // words of the key part
  std::string value;   // text after '='
};

}  // namespace

std::string to_string(Procedure p) {
  switch (p) {
    case Procedure::Icm: return "icm";
    case Procedure::OneStep: return "one-step";
    case Procedure::MultiStep: return "multi-step";
    case Procedure::Search: return "search";
  }
  return "one-step";
}

std::optional<Procedure> procedure_from_string(const std::string& s) {
  if (s == "icm") return Procedure::Icm;
  if (s == "one-step") return Procedure::OneStep;
  if (s == "multi-step") return Procedure::MultiStep;
  if (s == "search") return Procedure::Search;
  return std::nullopt;
}

SpecError::SpecError(std::vector<Diagnostic> diagnostics)
    : std::runtime_error([&] {
        std::string msg;
        for (const auto& d : diagnostics) {
          if (!msg.empty()) msg += '\n';
          msg += (d.line > 0 ? "line " + std::to_string(d.line) + ": " : std::string()) + d.code +
                 ": " + d.message;
        }
        return msg;
      }()),
      diagnostics_(std::move(diagnostics)) {}

bool SpecError::has(const std::string& code) const {
  return std::any_of(diagnostics_.begin(), diagnostics_.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

ModelSpecDocument parse_model_spec(const std::string& text) {
  std::vector<Diagnostic> diags;
  auto report = [&](int line, std::string code, std::string msg) {
    diags.push_back({line, std::move(code), std::move(msg)});
  };

  std::vector<Line> lines;
  {
    std::istringstream in(text);
    std::string raw;
    int number = 0;
    while (std::getline(in, raw)) {
      ++number;
      const std::string s = strip_comment(raw);
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        report(number, "syntax", "expected 'key = value', got '" + s + "'");
        continue;
      }
      Line l{number, {}, tokens(s.substr(0, eq)), trim(s.substr(eq + 1))};
      if (l.head.empty()) {
        report(number, "syntax", "missing key before '='");
        continue;
      }
      l.key = l.head.front();
      lines.push_back(std::move(l));
    }
  }

  ModelSpecDocument doc;
  std::map<std::string, std::size_t> var_index;
  std::map<std::string, std::size_t> factor_index;
  bool have_variables = false;

  auto expand = [&](const Line& l) {
    std::vector<std::string> out;
    for (const auto& t : tokens(l.value)) {
      if (var_index.count(t) == 0) {
        if (auto r = expand_range(t)) {
          out.insert(out.end(), r->begin(), r->end());
          continue;
        }
      }
      out.push_back(t);
    }
    return out;
  };

  for (const auto& l : lines) {
    if (l.key != "variables") continue;
    if (have_variables) {
      report(l.number, "duplicate key", "variables declared twice");
      continue;
    }
    have_variables = true;
    if (l.head.size() != 1) report(l.number, "syntax", "'variables' takes no qualifier");
    for (const auto& v : expand(l)) {
      if (var_index.count(v)) {
        report(l.number, "duplicate variable", "variable '" + v + "' listed twice");
        continue;
      }
      var_index[v] = doc.variables.size();
      doc.variables.push_back(v);
    }
  }
  if (!have_variables) report(0, "missing variables", "no 'variables = ...' line");

  std::map<std::string, int> assigned_at;
  for (const auto& l : lines) {
    if (l.key != "factor") continue;
    if (l.head.size() != 2) {
      report(l.number, "syntax", "expected 'factor <name> = <variables>'");
      continue;
    }
    const std::string& name = l.head[1];
    if (factor_index.count(name)) {
      report(l.number, "duplicate factor", "factor '" + name + "' declared twice");
      continue;
    }
    factor_index[name] = doc.factors.size();
    doc.factors.push_back(name);
    std::vector<std::string> members;
    for (const auto& v : expand(l)) {
      if (var_index.count(v) == 0) {
        report(l.number, "unknown variable", "'" + v + "' is not a declared variable");
        continue;
      }
      if (auto it = assigned_at.find(v); it != assigned_at.end()) {
        report(l.number, "duplicate salient assignment",
               "'" + v + "' already has a salient factor (line " + std::to_string(it->second) +
                   ")");
        continue;
      }
      assigned_at[v] = l.number;
      members.push_back(v);
    }
    if (members.empty()) report(l.number, "empty factor", "factor '" + name + "' has no variables");
    doc.salient.push_back(std::move(members));
  }
  if (have_variables) {
    for (const auto& v : doc.variables) {
      if (assigned_at.count(v) == 0) {
        report(0, "unassigned variable", "'" + v + "' has no salient factor");
      }
    }
  }

  std::set<std::string> seen_keys;
  auto once = [&](const Line& l) {
    if (!seen_keys.insert(l.key).second) {
      report(l.number, "duplicate key", "'" + l.key + "' given twice");
      return false;
    }
    if (l.head.size() != 1) {
      report(l.number, "syntax", "'" + l.key + "' takes no qualifier");
      return false;
    }
    return true;
  };
  auto number_value = [&](const Line& l) -> std::optional<double> {
    auto v = to_double(l.value);
    if (!v) report(l.number, "bad number", "'" + l.value + "' is not a number");
    return v;
  };

  std::set<std::pair<std::size_t, std::size_t>> phi_seen;
  for (const auto& l : lines) {
    if (l.key == "variables" || l.key == "factor") continue;
    if (l.key == "phi") {
      const auto vals = tokens(l.value);
      if (l.head.size() != 3 || vals.size() != 1) {
        report(l.number, "malformed phi entry",
               "expected 'phi <factor> <factor> = <value|free>'");
        continue;
      }
      auto fa = factor_index.find(l.head[1]);
      auto fb = factor_index.find(l.head[2]);
      if (fa == factor_index.end() || fb == factor_index.end()) {
        const std::string& bad = fa == factor_index.end() ? l.head[1] : l.head[2];
        report(l.number, "unknown factor", "'" + bad + "' is not a declared factor");
        continue;
      }
      if (fa->second == fb->second) {
        report(l.number, "malformed phi entry", "factor variances are fixed at 1");
        continue;
      }
      const auto key = std::minmax(fa->second, fb->second);
      const std::pair<std::size_t, std::size_t> cell{key.second, key.first};
      if (!phi_seen.insert(cell).second) {
        report(l.number, "malformed phi entry", "correlation given twice");
        continue;
      }
      if (vals[0] == "free") continue;
      const auto v = to_double(vals[0]);
      if (!v) {
        report(l.number, "malformed phi entry", "'" + vals[0] + "' is neither a number nor 'free'");
      } else if (!(*v > -1.0 && *v < 1.0)) {
        report(l.number, "phi out of range", "interfactor correlation must lie in (-1, 1)");
      } else {
        doc.fixed_phi[cell] = *v;
      }
    } else if (l.key == "swap") {
      const auto vals = tokens(l.value);
      if (l.head.size() != 1 || vals.size() != 2) {
        report(l.number, "syntax", "expected 'swap = <variable> <variable>'");
        continue;
      }
      bool ok = true;
      for (const auto& v : vals) {
        if (var_index.count(v) == 0) {
          report(l.number, "unknown variable", "'" + v + "' is not a declared variable");
          ok = false;
        }
      }
      if (ok) doc.swaps.emplace_back(vals[0], vals[1]);
    } else if (l.key == "procedure") {
      if (!once(l)) continue;
      if (auto p = procedure_from_string(l.value)) {
        doc.procedure = *p;
      } else {
        report(l.number, "unknown procedure",
               "'" + l.value + "' (expected icm, one-step, multi-step or search)");
      }
    } else if (l.key == "weight_tolerance") {
      if (!once(l)) continue;
      if (auto v = number_value(l)) {
        if (*v <= 0) report(l.number, "bad number", "weight_tolerance must be positive");
        doc.weight_tolerance = *v;
      }
    } else if (l.key == "max_rounds") {
      if (!once(l)) continue;
      auto v = to_integer(l.value);
      if (!v || *v < 1) {
        report(l.number, "bad number", "max_rounds must be a positive integer");
      } else {
        doc.max_rounds = static_cast<int>(*v);
      }
    } else if (l.key == "fix_phi_from_icm") {
      if (!once(l)) continue;
      if (l.value == "true") {
        doc.fix_phi_from_icm = true;
      } else if (l.value == "false") {
        doc.fix_phi_from_icm = false;
      } else {
        report(l.number, "bad boolean", "expected true or false");
      }
    } else if (l.key == "mi_threshold") {
      if (!once(l)) continue;
      if (auto v = number_value(l)) doc.mi_threshold = *v;
    } else if (l.key == "max_freed_per_factor") {
      if (!once(l)) continue;
      auto v = to_integer(l.value);
      if (!v || *v < 0) {
        report(l.number, "bad number", "max_freed_per_factor must be a non-negative integer");
      } else {
        doc.max_freed_per_factor = static_cast<std::size_t>(*v);
      }
    } else if (l.key == "n") {
      if (!once(l)) continue;
      if (auto v = number_value(l)) {
        if (*v <= 1) report(l.number, "bad number", "n must exceed 1");
        doc.n = *v;
      }
    } else if (l.key == "weights") {
      if (!once(l)) continue;
      std::vector<double> w;
      bool ok = true;
      for (const auto& t : tokens(l.value)) {
        auto v = to_double(t);
        if (!v) {
          report(l.number, "bad number", "'" + t + "' is not a number");
          ok = false;
          break;
        }
        w.push_back(*v);
      }
      if (ok && w.size() != doc.variables.size()) {
        report(l.number, "weights count",
               std::to_string(w.size()) + " weights for " + std::to_string(doc.variables.size()) +
                   " variables");
        ok = false;
      }
      if (ok) doc.weights = std::move(w);
    } else {
      report(l.number, "unknown key", "'" + l.key + "' is not a recognised key");
    }
  }

  if (doc.factors.size() < 2 && have_variables) {
    report(0, "too few factors", "at least two factors are required");
  }
  if (!diags.empty()) throw SpecError(std::move(diags));
  return doc;
}

std::string print_model_spec(const ModelSpecDocument& doc) {
  std::ostringstream out;
  out << "variables =";
  for (const auto& v : doc.variables) out << ' ' << v;
  out << '\n';
  for (std::size_t f = 0; f < doc.factors.size(); ++f) {
    out << "factor " << doc.factors[f] << " =";
    for (const auto& v : doc.salient[f]) out << ' ' << v;
    out << '\n';
  }
  for (const auto& [cell, value] : doc.fixed_phi) {
    out << "phi " << doc.factors[cell.first] << ' ' << doc.factors[cell.second] << " = "
        << num(value) << '\n';
  }
  out << "procedure = " << to_string(doc.procedure) << '\n';
  out << "weight_tolerance = " << num(doc.weight_tolerance) << '\n';
  out << "max_rounds = " << doc.max_rounds << '\n';
  out << "fix_phi_from_icm = " << (doc.fix_phi_from_icm ? "true" : "false") << '\n';
  out << "mi_threshold = " << num(doc.mi_threshold) << '\n';
  out << "max_freed_per_factor = " << doc.max_freed_per_factor << '\n';
  if (doc.weights) {
    out << "weights =";
    for (double w : *doc.weights) out << ' ' << num(w);
    out << '\n';
  }
  for (const auto& [a, b] : doc.swaps) out << "swap = " << a << ' ' << b << '\n';
  if (doc.n) out << "n = " << num(*doc.n) << '\n';
  return out.str();
}

ModelSpecDocument load_model_spec(const std::filesystem::path& path) {
  return parse_model_spec(read_file(path));
}

std::size_t variable_index(const ModelSpecDocument& doc, const std::string& name) {
  const auto it = std::find(doc.variables.begin(), doc.variables.end(), name);
  if (it == doc.variables.end()) throw InputError("unknown variable '" + name + "'");
  return static_cast<std::size_t>(it - doc.variables.begin());
}

FactorModel to_factor_model(const ModelSpecDocument& doc) {
  std::vector<std::size_t> assign(doc.variables.size(), 0);
  for (std::size_t f = 0; f < doc.factors.size(); ++f) {
    for (const auto& v : doc.salient[f]) assign[variable_index(doc, v)] = f;
  }
  FactorModel model{LoadingPattern::independent_clusters(assign, doc.factors.size()),
                    PhiSpec::all_free(doc.factors.size())};
  for (const auto& [cell, value] : doc.fixed_phi) {
    model.phi.set_fixed(cell.first, cell.second, value);
  }
  return model;
}

SampleMoments align_moments(const ModelSpecDocument& doc, const SampleMoments& moments) {
  const std::size_t p = doc.variables.size();
  std::vector<Eigen::Index> idx;
  for (const auto& v : doc.variables) {
    const auto it = std::find(moments.names.begin(), moments.names.end(), v);
    if (it == moments.names.end()) break;
    idx.push_back(static_cast<Eigen::Index>(it - moments.names.begin()));
  }
  if (idx.size() != p) {
    if (moments.p() != p) {
      throw InputError("data has " + std::to_string(moments.p()) + " variables, model has " +
                       std::to_string(p));
    }
    idx.clear();
    for (std::size_t i = 0; i < p; ++i) idx.push_back(static_cast<Eigen::Index>(i));
  }
  SampleMoments out;
  out.s.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      out.s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = moments.s(idx[i], idx[j]);
    }
  }
  out.n = moments.n;
  out.names = doc.variables;
  return out;
}

ProcedureTrace run_model_spec(const ModelSpecDocument& doc, const SampleMoments& moments,
                              const FitOptions& options) {
  const FactorModel model = to_factor_model(doc);
  switch (doc.procedure) {
    case Procedure::Icm:
      return icm(model.pattern, model.phi, moments, options);
    case Procedure::OneStep:
      return one_step(model.pattern, model.phi, moments, options);
    case Procedure::MultiStep: {
      MultiStepOptions ms;
      ms.weight_tolerance = doc.weight_tolerance;
      ms.max_rounds = doc.max_rounds;
      ms.fix_phi_from_icm = doc.fix_phi_from_icm;
      if (doc.weights) {
        ms.initial_weights = Eigen::Map<const Vector>(doc.weights->data(),
                                                      static_cast<Eigen::Index>(doc.weights->size()));
      }
      for (const auto& [a, b] : doc.swaps) {
        ms.member_swaps.emplace_back(variable_index(doc, a), variable_index(doc, b));
      }
      return multi_step(model.pattern, model.phi, moments, options, ms);
    }
    case Procedure::Search:
      return specification_search(model.pattern, model.phi, moments, options, doc.mi_threshold,
                                  doc.max_freed_per_factor);
  }
  throw InputError("unknown procedure");
}

SampleMoments parse_correlation_matrix(const std::string& text, std::optional<double> n_override) {
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  std::optional<double> n;
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;
  while (std::getline(in, raw)) {
    ++number;
    const std::string s = strip_comment(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq != std::string::npos) {
      const std::string key = trim(s.substr(0, eq));
      const std::string value = trim(s.substr(eq + 1));
      if (key == "n") {
        auto v = to_double(value);
        if (!v || *v <= 1) {
          throw InputError("line " + std::to_string(number) + ": n must be a number above 1");
        }
        n = v;
      } else if (key == "names") {
        names = tokens(value);
      } else {
        throw InputError("line " + std::to_string(number) + ": unknown header '" + key + "'");
      }
      continue;
    }
    std::vector<double> row;
    for (const auto& t : tokens(s)) {
      auto v = to_double(t);
      if (!v) {
        throw InputError("line " + std::to_string(number) + ": '" + t + "' is not a number");
      }
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
    row_lines.push_back(number);
  }
  const std::size_t p = rows.size();
  if (p == 0) throw InputError("no matrix rows found");

  // Either every row has p entries or row i has i+1 (lower triangle).
  const bool lower = p > 1 && rows[0].size() == 1;
  Matrix s(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t expected = lower ? i + 1 : p;
    if (rows[i].size() != expected) {
      throw InputError("line " + std::to_string(row_lines[i]) + ": matrix is not square: row " +
                       std::to_string(i + 1) + " has " + std::to_string(rows[i].size()) +
                       " entries, expected " + std::to_string(expected));
    }
    for (std::size_t j = 0; j < expected; ++j) {
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      if (lower) s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rows[i][j];
    }
  }
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(s(i, j) - s(j, i)) > 1e-8) {
        throw InputError("matrix is asymmetric at (" + std::to_string(i + 1) + ", " +
                         std::to_string(j + 1) + ")");
      }
    }
  }
  s = 0.5 * (s + s.transpose()).eval();
  if (!names.empty() && names.size() != p) {
    throw InputError(std::to_string(names.size()) + " names for a " + std::to_string(p) + "x" +
                     std::to_string(p) + " matrix");
  }
  if (names.empty()) {
    for (std::size_t i = 0; i < p; ++i) names.push_back("x" + std::to_string(i + 1));
  }
  if (n_override) n = n_override;
  if (!n) throw InputError("n missing for correlation input (add 'n = ...' or pass --n)");

  SampleMoments m;
  m.s = s;
  m.n = n;
  m.names = std::move(names);
  try {
    check_moments(m);
  } catch (const NumericalError& e) {
    throw InputError(e.what());
  }
  return m;
}

SampleMoments read_correlation_matrix(const std::filesystem::path& path,
                                      std::optional<double> n_override) {
  return parse_correlation_matrix(read_file(path), n_override);
}

SampleMoments parse_raw_data(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, raw)) {
    ++number;
    const std::string s = strip_comment(raw);
    if (s.empty()) continue;
    auto t = tokens(s);
    if (names.empty()) {
      names = std::move(t);
      continue;
    }
    if (t.size() != names.size()) {
      throw InputError("line " + std::to_string(number) + ": " + std::to_string(t.size()) +
                       " values for " + std::to_string(names.size()) + " variables");
    }
    std::vector<double> row;
    for (const auto& tok : t) {
      auto v = to_double(tok);
      if (!v) {
        throw InputError("line " + std::to_string(number) + ": '" + tok + "' is not a number");
      }
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (names.empty()) throw InputError("raw data has no header row");
  if (rows.size() <= names.size()) {
    throw InputError("raw data needs more observations than variables");
  }
  Matrix data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  SampleMoments m;
  m.s = correlation_matrix(data);
  m.n = static_cast<double>(rows.size());
  m.names = std::move(names);
  try {
    check_moments(m);
  } catch (const NumericalError& e) {
    throw InputError(e.what());
  }
  return m;
}

SampleMoments read_raw_data(const std::filesystem::path& path) {
  return parse_raw_data(read_file(path));
}

void write_correlation_matrix(const SampleMoments& moments, const std::filesystem::path& path) {
  std::ostringstream out;
  if (moments.n) out << "n = " << num(*moments.n) << '\n';
  if (!moments.names.empty()) {
    out << "names =";
    for (const auto& nm : moments.names) out << ' ' << nm;
    out << '\n';
  }
  for (Eigen::Index i = 0; i < moments.s.rows(); ++i) {
    for (Eigen::Index j = 0; j < moments.s.cols(); ++j) {
      out << (j ? " " : "") << num(moments.s(i, j));
    }
    out << '\n';
  }
  write_file(path, out.str());
}

void write_raw_data(const Matrix& data, const std::vector<std::string>& names,
                    const std::filesystem::path& path) {
  std::ostringstream out;
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) out << (j ? "," : "") << num(data(i, j));
    out << '\n';
  }
  write_file(path, out.str());
}

// ---- result documents ------------------------------------------------------

namespace {

json encode(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double decode(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw InputError("bad number '" + s + "' in result file");
}

json encode(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(encode(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

json encode(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(encode(v[i]));
  return out;
}

Matrix decode_matrix(const json& j) {
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != c) {
      throw InputError("ragged matrix in result file");
    }
    for (Eigen::Index k = 0; k < c; ++k) {
      m(i, k) = decode(j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
    }
  }
  return m;
}

Vector decode_vector(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = decode(j[i]);
  return v;
}

json encode_optional(const std::optional<double>& v) {
  return v ? encode(*v) : json(nullptr);
}

std::optional<double> decode_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return decode(j);
}

}  // namespace

ResultDocument to_result_document(const ProcedureTrace& trace,
                                  const std::vector<std::string>& variables,
                                  const std::vector<std::string>& factors) {
  ResultDocument doc;
  doc.procedure = trace.procedure;
  doc.converged = trace.converged;
  doc.variables = variables;
  doc.factors = factors;
  for (const auto& step : trace.steps) {
    StepRecord r;
    r.label = step.label;
    r.converged = step.solution.converged;
    r.f_min = step.solution.f_min;
    r.iterations = step.solution.n_iterations;
    r.gradient_norm = step.solution.gradient_norm;
    r.lambda = step.solution.lambda_hat;
    r.phi = step.solution.phi_hat;
    r.psi = step.solution.psi_hat;
    r.salient_factor = step.model.pattern.salient_assignment();
    r.constraint_residuals = step.solution.constraint_residuals;
    r.weights = step.weights;
    r.weight_gap = step.weight_gap;
    r.fit = step.fit;
    r.quality_index = buffered_quality_index(r.lambda, step.model.pattern);
    doc.steps.push_back(std::move(r));
  }
  return doc;
}

std::string result_to_text(const ResultDocument& doc) {
  json j;
  j["format"] = "bss-result";
  j["version"] = 1;
  j["procedure"] = doc.procedure;
  j["converged"] = doc.converged;
  j["variables"] = doc.variables;
  j["factors"] = doc.factors;
  json steps = json::array();
  for (const auto& s : doc.steps) {
    json js;
    js["label"] = s.label;
    js["converged"] = s.converged;
    js["f_min"] = encode(s.f_min);
    js["iterations"] = s.iterations;
    js["gradient_norm"] = encode(s.gradient_norm);
    js["lambda"] = encode(s.lambda);
    js["phi"] = encode(s.phi);
    js["psi"] = encode(s.psi);
    js["salient_factor"] = s.salient_factor;
    js["constraint_residuals"] = encode(s.constraint_residuals);
    js["weights"] = s.weights ? encode(*s.weights) : json(nullptr);
    js["weight_gap"] = encode_optional(s.weight_gap);
    js["quality_index"] = encode(s.quality_index);
    json fit;
    fit["chi_square"] = encode_optional(s.fit.chi_square);
    fit["df"] = s.fit.df;
    fit["srmr"] = encode(s.fit.srmr);
    fit["rmsea"] = encode_optional(s.fit.rmsea);
    fit["cfi"] = encode_optional(s.fit.cfi);
    fit["baseline_chi_square"] = encode_optional(s.fit.baseline_chi_square);
    fit["baseline_df"] = s.fit.baseline_df;
    fit["n"] = encode_optional(s.fit.n);
    js["fit"] = std::move(fit);
    steps.push_back(std::move(js));
  }
  j["steps"] = std::move(steps);
  json summary = json::array();
  std::istringstream lines(summary_text(doc));
  for (std::string line; std::getline(lines, line);) summary.push_back(line);
  j["summary"] = std::move(summary);
  return j.dump(2) + "\n";
}

ResultDocument result_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("result file is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", "") != "bss-result") throw InputError("not a result file");
    ResultDocument doc;
    doc.procedure = j.at("procedure").get<std::string>();
    doc.converged = j.at("converged").get<bool>();
    doc.variables = j.at("variables").get<std::vector<std::string>>();
    doc.factors = j.at("factors").get<std::vector<std::string>>();
    for (const auto& js : j.at("steps")) {
      StepRecord s;
      s.label = js.at("label").get<std::string>();
      s.converged = js.at("converged").get<bool>();
      s.f_min = decode(js.at("f_min"));
      s.iterations = js.at("iterations").get<int>();
      s.gradient_norm = decode(js.at("gradient_norm"));
      s.lambda = decode_matrix(js.at("lambda"));
      s.phi = decode_matrix(js.at("phi"));
      s.psi = decode_vector(js.at("psi"));
      s.salient_factor = js.at("salient_factor").get<std::vector<std::size_t>>();
      s.constraint_residuals = decode_vector(js.at("constraint_residuals"));
      if (!js.at("weights").is_null()) s.weights = decode_vector(js.at("weights"));
      s.weight_gap = decode_optional(js.at("weight_gap"));
      s.quality_index = decode(js.at("quality_index"));
      const auto& f = js.at("fit");
      s.fit.chi_square = decode_optional(f.at("chi_square"));
      s.fit.df = f.at("df").get<int>();
      s.fit.srmr = decode(f.at("srmr"));
      s.fit.rmsea = decode_optional(f.at("rmsea"));
      s.fit.cfi = decode_optional(f.at("cfi"));
      s.fit.baseline_chi_square = decode_optional(f.at("baseline_chi_square"));
      s.fit.baseline_df = f.at("baseline_df").get<int>();
      s.fit.n = decode_optional(f.at("n"));
      doc.steps.push_back(std::move(s));
    }
    return doc;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed result file: ") + e.what());
  }
}

void write_result(const ResultDocument& doc, const std::filesystem::path& path) {
  write_file(path, result_to_text(doc));
}

void write_result(const ProcedureTrace& trace, const std::vector<std::string>& variables,
                  const std::vector<std::string>& factors, const std::filesystem::path& path) {
  write_result(to_result_document(trace, variables, factors), path);
}

ResultDocument read_result(const std::filesystem::path& path) {
  return result_from_text(read_file(path));
}

std::string summary_text(const ResultDocument& doc) {
  std::ostringstream out;
  out << "procedure " << doc.procedure << (doc.converged ? " (converged)" : " (NOT converged)")
      << '\n';
  for (const auto& s : doc.steps) {
    out << s.label << ": F = " << fixed3(s.f_min) << ", df = " << s.fit.df;
    if (s.fit.chi_square) out << ", chi2 = " << fixed3(*s.fit.chi_square);
    out << ", SRMR = " << fixed3(s.fit.srmr);
    if (s.fit.rmsea) out << ", RMSEA = " << fixed3(*s.fit.rmsea);
    if (s.fit.cfi) out << ", CFI = " << fixed3(*s.fit.cfi);
    if (s.weight_gap) out << ", weight gap = " << num(*s.weight_gap);
    out << (s.converged ? "" : " [not converged]") << '\n';
  }
  if (doc.steps.empty()) return out.str();
  const auto& s = doc.steps.back();
  out << "loadings (" << s.label << ")\n";
  out << "         ";
  for (const auto& f : doc.factors) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%8s", f.c_str());
    out << buf;
  }
  out << "     psi\n";
  for (Eigen::Index i = 0; i < s.lambda.rows(); ++i) {
    char buf[32];
    const std::string name =
        static_cast<std::size_t>(i) < doc.variables.size() ? doc.variables[i] : "?";
    std::snprintf(buf, sizeof buf, "%-9s", name.c_str());
    out << buf;
    for (Eigen::Index j = 0; j < s.lambda.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%8.3f", s.lambda(i, j));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%8.3f", s.psi[i]);
    out << buf << '\n';
  }
  out << "factor correlations\n";
  for (Eigen::Index i = 0; i < s.phi.rows(); ++i) {
    out << "         ";
    for (Eigen::Index j = 0; j <= i; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%8.3f", s.phi(i, j));
      out << buf;
    }
    out << '\n';
  }
  out << "buffered quality index = " << fixed3(s.quality_index) << '\n';
  return out.str();
}

// ---- simulation files ------------------------------------------------------

GridSpec parse_grid_spec(const std::string& text) {
  GridSpec grid;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  auto fail = [&](const std::string& msg) {
    throw InputError("line " + std::to_string(number) + ": " + msg);
  };
  auto doubles = [&](const std::string& value) {
    std::vector<double> out;
    for (const auto& t : tokens(value)) {
      auto v = to_double(t);
      if (!v) fail("'" + t + "' is not a number");
      out.push_back(*v);
    }
    if (out.empty()) fail("empty list");
    return out;
  };
  auto integer = [&](const std::string& value) {
    auto v = to_integer(value);
    if (!v || *v < 0) fail("'" + value + "' is not a non-negative integer");
    return *v;
  };
  while (std::getline(in, raw)) {
    ++number;
    const std::string s = strip_comment(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key == "salient") {
      grid.salient = doubles(value);
    } else if (key == "nonsalient") {
      grid.nonsalient = doubles(value);
    } else if (key == "phi") {
      grid.phi = doubles(value);
    } else if (key == "n") {
      grid.n.clear();
      for (const auto& t : tokens(value)) grid.n.push_back(static_cast<int>(integer(t)));
      if (grid.n.empty()) fail("empty list");
    } else if (key == "factors") {
      grid.factors = static_cast<std::size_t>(integer(value));
    } else if (key == "per_factor") {
      grid.per_factor = static_cast<std::size_t>(integer(value));
    } else if (key == "replications") {
      grid.replications = static_cast<int>(integer(value));
    } else if (key == "seed") {
      auto v = std::strtoull(value.c_str(), nullptr, 10);
      if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
        fail("'" + value + "' is not a seed");
      }
      grid.seed = v;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  try {
    validate_grid(grid);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return grid;
}

GridSpec load_grid_spec(const std::filesystem::path& path) {
  return parse_grid_spec(read_file(path));
}

const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"cell", "salient", "nonsalient", "phi", "n", "replications"};
    for (const std::string m : {"icm", "buffered"}) {
      for (const std::string f : {"used", "excluded", "loading_rmsd", "loading_rmsd_se",
                                  "salient_rmsd", "salient_rmsd_se", "phi_rmsd", "phi_rmsd_se",
                                  "rmsea", "rmsea_se"}) {
        c.push_back(m + "_" + f);
      }
    }
    return c;
  }();
  return cols;
}

const std::vector<std::string>& record_columns() {
  static const std::vector<std::string> cols{"cell",         "replication", "seed",
                                             "method",       "converged",   "loading_rmsd",
                                             "salient_rmsd", "phi_rmsd",    "rmsea",
                                             "f_min"};
  return cols;
}

namespace {

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out + '\n';
}

void append_method(std::vector<std::string>& row, const MethodSummary& m) {
  row.push_back(std::to_string(m.used));
  row.push_back(std::to_string(m.excluded));
  for (const MeanSe* v : {&m.loading_rmsd, &m.salient_rmsd, &m.phi_rmsd, &m.rmsea}) {
    row.push_back(num(v->mean));
    row.push_back(num(v->se));
  }
}

}  // namespace

std::string summary_table(const std::vector<CellSummary>& cells) {
  std::string out = csv_row(summary_columns());
  for (const auto& c : cells) {
    std::vector<std::string> row{std::to_string(c.cell), num(c.at.salient), num(c.at.nonsalient),
                                 num(c.at.phi),          std::to_string(c.at.n),
                                 std::to_string(c.replications)};
    append_method(row, c.icm);
    append_method(row, c.buffered);
    out += csv_row(row);
  }
  return out;
}

std::string record_table(const std::vector<ReplicationRecord>& records) {
  std::string out = csv_row(record_columns());
  for (const auto& r : records) {
    out += csv_row({std::to_string(r.cell), std::to_string(r.replication), std::to_string(r.seed),
                    r.method == Estimation::Icm ? "icm" : "buffered",
                    r.converged ? "1" : "0", num(r.loading_rmsd), num(r.salient_rmsd),
                    num(r.phi_rmsd), num(r.rmsea), num(r.f_min)});
  }
  return out;
}

void write_summary_table(const std::vector<CellSummary>& cells,
                         const std::filesystem::path& path) {
  write_file(path, summary_table(cells));
}

void write_record_table(const std::vector<ReplicationRecord>& records,
                        const std::filesystem::path& path) {
  write_file(path, record_table(records));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw InputError("write to '" + path.string() + "' failed");
}

}  // namespace bss::io
