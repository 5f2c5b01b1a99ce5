#include "bss/procedures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

namespace bss {

namespace {

ProcedureStep make_step(std::string label, FactorModel model, std::optional<ConstraintSet> cs,
                        const SampleMoments& moments, const FitOptions& options) {
  ProcedureStep step;
  step.label = std::move(label);
  step.model = std::move(model);
  step.constraints = std::move(cs);
  const ConstraintSet* cp = step.constraints ? &*step.constraints : nullptr;
  step.solution = fit(step.model, cp, moments, options);
  step.fit = fit_report(step.model, cp, moments, step.solution);
  return step;
}

FitOptions warm_start(const FitOptions& options, const Solution& previous) {
  FitOptions out = options;
  out.start = previous.parameters();
  return out;
}

}  // namespace

Vector salient_estimates(const LoadingPattern& pattern, const Matrix& lambda) {
  Vector out(static_cast<Eigen::Index>(pattern.p()));
  for (std::size_t k = 0; k < pattern.p(); ++k) {
    out[static_cast<Eigen::Index>(k)] = lambda(k, pattern.salient_factor(k));
  }
  return out;
}

ProcedureTrace icm(const LoadingPattern& pattern, const PhiSpec& phi, const SampleMoments& moments,
                   const FitOptions& options) {
  ProcedureTrace trace;
  trace.procedure = "icm";
  FactorModel model{pattern.with_nonsalient(CellRole::FixedZero), phi};
  trace.steps.push_back(make_step("ICM", std::move(model), std::nullopt, moments, options));
  trace.converged = trace.steps.back().solution.converged;
  return trace;
}

ProcedureTrace one_step(const LoadingPattern& pattern, const PhiSpec& phi,
                        const SampleMoments& moments, const FitOptions& options) {
  ProcedureTrace trace;
  trace.procedure = "one-step";
  FactorModel model{pattern.with_nonsalient(CellRole::NonsalientFree), phi};
  auto cs = build_one_step_constraints(model.pattern);
  trace.steps.push_back(make_step("one-step", std::move(model), std::move(cs), moments, options));
  trace.converged = trace.steps.back().solution.converged;
  return trace;
}

ProcedureTrace multi_step(const LoadingPattern& pattern, const PhiSpec& phi,
                          const SampleMoments& moments, const FitOptions& options,
                          const MultiStepOptions& ms) {
  if (ms.max_rounds < 2 && !ms.initial_weights) {
    throw std::invalid_argument("multi-step procedure needs at least two rounds");
  }
  ProcedureTrace trace;
  trace.procedure = "multi-step";
  const LoadingPattern buffered = pattern.with_nonsalient(CellRole::NonsalientFree);

  Vector weights;
  PhiSpec constrained_phi = phi;
  std::optional<Solution> previous;
  if (ms.initial_weights) {
    weights = *ms.initial_weights;
  } else {
    FactorModel icm_model{pattern.with_nonsalient(CellRole::FixedZero), phi};
    trace.steps.push_back(make_step("Model 1 (ICM)", std::move(icm_model), std::nullopt, moments,
                                    options));
    const Solution& first = trace.steps.back().solution;
    if (!first.converged) {
      return trace;
    }
    weights = salient_estimates(pattern, first.lambda_hat);
    if (ms.fix_phi_from_icm) {
      for (std::size_t i = 0; i < phi.q(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if (phi.is_free(i, j)) constrained_phi.set_fixed(i, j, first.phi_hat(i, j));
        }
      }
    }
    previous = first;
  }

  while (static_cast<int>(trace.steps.size()) < ms.max_rounds) {
    auto cs = build_fixed_weight_constraints(buffered, weights);
    for (const auto& [a, b] : ms.member_swaps) {
      cs = swap_members(cs, a, b);
    }
    const FitOptions step_options = previous ? warm_start(options, *previous) : options;
    const std::string label = "Model " + std::to_string(trace.steps.size() + 1);
    auto step = make_step(label, FactorModel{buffered, constrained_phi}, std::move(cs), moments,
                          step_options);
    const Vector estimates = salient_estimates(pattern, step.solution.lambda_hat);
    step.weights = weights;
    step.weight_gap = (estimates - weights).cwiseAbs().maxCoeff();
    trace.steps.push_back(std::move(step));

    const auto& last = trace.steps.back();
    if (!last.solution.converged) {
      return trace;
    }
    if (*last.weight_gap < ms.weight_tolerance) {
      trace.converged = true;
      return trace;
    }
    weights = estimates;
    previous = last.solution;
  }
  return trace;
}

std::vector<ModificationIndex> modification_indices(const FactorModel& icm_model,
                                                    const SampleMoments& moments,
                                                    const Solution& icm_solution,
                                                    const FitOptions& options, unsigned threads) {
  if (!moments.n) {
    throw std::domain_error("modification indices need the sample size");
  }
  std::vector<ModificationIndex> cells;
  for (std::size_t i = 0; i < icm_model.p(); ++i) {
    for (std::size_t j = 0; j < icm_model.q(); ++j) {
      if (icm_model.pattern.role(i, j) == CellRole::FixedZero) {
        cells.push_back({i, j, 0.0, false});
      }
    }
  }
  const double base_chi = chi_square(icm_solution.f_min, *moments.n);
  const FitOptions start = warm_start(options, icm_solution);

  auto evaluate = [&](ModificationIndex& cell) {
    FactorModel freed = icm_model;
    freed.pattern.set_role(cell.var, cell.factor, CellRole::NonsalientFree);
    const Solution s = fit(freed, nullptr, moments, start);
    cell.converged = s.converged;
    cell.value = std::max(base_chi - chi_square(s.f_min, *moments.n), 0.0);
  };

  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::min<unsigned>(threads, static_cast<unsigned>(cells.size()));
  if (threads <= 1) {
    for (auto& cell : cells) evaluate(cell);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < cells.size(); k += threads) evaluate(cells[k]);
      });
    }
    for (auto& th : pool) th.join();
  }
  return cells;
}

ProcedureTrace specification_search(const LoadingPattern& pattern, const PhiSpec& phi,
                                    const SampleMoments& moments, const FitOptions& options,
                                    double mi_threshold, std::size_t max_freed_per_factor) {
  ProcedureTrace trace;
  trace.procedure = "search";
  FactorModel icm_model{pattern.with_nonsalient(CellRole::FixedZero), phi};
  trace.steps.push_back(make_step("ICM", icm_model, std::nullopt, moments, options));
  const Solution& base = trace.steps.back().solution;
  if (!base.converged) {
    return trace;
  }

  const auto indices = modification_indices(icm_model, moments, base, options);
  // Refit noise must not reorder cells whose indices are equal by symmetry.
  auto rounded = [](double v) { return std::round(v * 1e6) / 1e6; };
  std::map<std::size_t, std::vector<ModificationIndex>> by_factor;
  for (const auto& mi : indices) {
    if (mi.converged && mi.value > mi_threshold) by_factor[mi.factor].push_back(mi);
  }
  FactorModel final_model = icm_model;
  for (auto& [factor, list] : by_factor) {
    std::stable_sort(list.begin(), list.end(), [&](const auto& a, const auto& b) {
      const double ra = rounded(a.value);
      const double rb = rounded(b.value);
      if (ra != rb) return ra > rb;
      return a.var < b.var;
    });
    for (std::size_t k = 0; k < list.size() && k < max_freed_per_factor; ++k) {
      final_model.pattern.set_role(list[k].var, factor, CellRole::NonsalientFree);
    }
  }
  trace.steps.push_back(make_step("specification search", std::move(final_model), std::nullopt,
                                  moments, warm_start(options, base)));
  trace.converged = trace.steps.back().solution.converged;
  return trace;
}

}  // namespace bss
