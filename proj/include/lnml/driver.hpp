#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lnml/core.hpp"
#include "lnml/errors.hpp"
#include "lnml/lmnn.hpp"
#include "lnml/mcml.hpp"
#include "lnml/neighborhood.hpp"

namespace lnml {

enum class LnmlLearner { kLnLmnn, kLnMcml };

inline const char* learner_name(LnmlLearner learner) {
  return learner == LnmlLearner::kLnLmnn ? "ln-lmnn" : "ln-mcml";
}

struct LnmlConfig {
  LnmlLearner learner = LnmlLearner::kLnLmnn;
  NeighborhoodBudget budget{3, 3, 3};
  int max_outer_iters = 20;
  double outer_tol = 1e-6;  // relative change of the joint objective
  LmnnConfig lmnn;          // read when learner == kLnLmnn
  McmlConfig mcml;          // read when learner == kLnMcml

  void validate() const {
    if (max_outer_iters < 1) throw ContractError("lnml: max_outer_iters must be >= 1");
    if (!(outer_tol > 0.0) || !std::isfinite(outer_tol))
      throw ContractError("lnml: outer_tol must be positive");
    const NeighborhoodBudget checked(budget.k_min, budget.k_max, budget.k_av);
    (void)checked;
    if (learner == LnmlLearner::kLnMcml) {
      if (budget.k_min != budget.k_max)
        throw ContractError("lnml: LN-MCML needs a uniform budget (k_min = k_max = k_av)");
      mcml.validate();
    } else {
      lmnn.validate();
    }
  }
};

enum class LnmlStop { kToleranceReached, kAssignmentFixedPoint, kIterationCap };

struct LnmlReport {
  MetricMatrix final_metric;
  NeighborhoodAssignment final_assignment;
  std::vector<double> outer_objective_trace;   // one entry per completed iteration
  int outer_iterations_used = 0;
  std::vector<int> assignment_change_trace;    // pairs changed, same indexing
  LnmlStop stop_reason = LnmlStop::kIterationCap;
};

struct LnmlProgress {
  int iteration = 0;
  double objective = 0.0;
  int pairs_changed = 0;
};
using LnmlProgressSink = std::function<void(const LnmlProgress&)>;

// Raised when the inner metric learner diverges; carries everything the
// driver had completed up to that point.
struct LnmlDivergenceError : DivergenceError {
  LnmlDivergenceError(const DivergenceError& cause, LnmlReport partial_report, int iteration)
      : DivergenceError("lnml_fit: metric learner diverged at outer iteration " +
                            std::to_string(iteration) + ": " + cause.what(),
                        cause.last_valid_metric),
        partial(std::move(partial_report)) {}

  LnmlReport partial;
};

namespace detail {

inline double restricted_cost_sum(const PairCostTable& costs, const NeighborhoodAssignment& p) {
  double total = 0.0;
  for (const auto& [i, j] : p.pairs) {
    const auto& row = costs.rows[static_cast<std::size_t>(i)];
    const auto it = std::lower_bound(
        row.begin(), row.end(), j,
        [](const std::pair<int, double>& entry, int target) { return entry.first < target; });
    if (it == row.end() || it->first != j)
      throw ContractError("joint_objective: pair (" + std::to_string(i) + ", " +
                          std::to_string(j) + ") is not a same-class candidate");
    total += it->second;
  }
  return total;
}

inline PairCostTable learner_pair_costs(const MetricMatrix& m, const Dataset& data,
                                        const LnmlConfig& config) {
  return config.learner == LnmlLearner::kLnLmnn
             ? lmnn_pair_costs(m, data, config.lmnn.mu)
             : mcml_pair_costs(m, data, config.budget.k_av);
}

}  // namespace detail

// Sum of the learner's pair costs over the assignment's pairs at fixed M.
inline double joint_objective(const NeighborhoodAssignment& p, const MetricMatrix& m,
                              const Dataset& data, const LnmlConfig& config) {
  if (p.size() == 0) return 0.0;
  return detail::restricted_cost_sum(detail::learner_pair_costs(m, data, config), p);
}

// Alternating optimization: solve the neighborhood LP at the current metric,
// then refit the metric under the new assignment, warm-starting from the
// previous one. Stops on a stable assignment, a small relative drop of the
// joint objective, or the iteration cap, whichever comes first.
inline LnmlReport lnml_fit(const Dataset& data, const LnmlConfig& config,
                           const MetricMatrix& initial_metric,
                           const LnmlProgressSink& progress = {}) {
  config.validate();
  validate_dataset(data);
  require_valid_metric(initial_metric, "lnml_fit");
  if (initial_metric.dim() != data.dim())
    throw ContractError("lnml_fit: metric dimension does not match data");
  {
    const PairCostTable skeleton = PairCostTable::candidates_from_labels(data.labels);
    const FeasibilityVerdict verdict = check_feasibility(skeleton, config.budget);
    if (!verdict.feasible)
      throw BudgetError("lnml_fit: infeasible budget: " + verdict.reason, verdict);
  }

  LnmlReport report;
  MetricMatrix metric = initial_metric;
  NeighborhoodAssignment assignment;
  bool have_assignment = false;

  for (int iter = 1; iter <= config.max_outer_iters; ++iter) {
    const PairCostTable costs = detail::learner_pair_costs(metric, data, config);
    NeighborhoodAssignment next_assignment = solve_assignment(costs, config.budget).first;
    if (have_assignment && next_assignment.pairs == assignment.pairs) {
      report.stop_reason = LnmlStop::kAssignmentFixedPoint;
      break;
    }
    const int changed = have_assignment ? assignment_difference(next_assignment, assignment)
                                        : static_cast<int>(next_assignment.size());
    assignment = std::move(next_assignment);
    have_assignment = true;

    FitResult fit;
    try {
      fit = config.learner == LnmlLearner::kLnLmnn
                ? lmnn_fit(data, assignment, metric, config.lmnn)
                : mcml_fit(data, assignment, metric, config.mcml);
    } catch (const DivergenceError& cause) {
      report.final_metric = metric;
      report.final_assignment = assignment;
      throw LnmlDivergenceError(cause, std::move(report), iter);
    }
    metric = std::move(fit.metric);

    const double objective = joint_objective(assignment, metric, data, config);
    report.outer_objective_trace.push_back(objective);
    report.assignment_change_trace.push_back(changed);
    report.outer_iterations_used = iter;
    if (progress) progress({iter, objective, changed});

    if (iter >= 2) {
      const double prev = report.outer_objective_trace[static_cast<std::size_t>(iter) - 2];
      if (prev - objective < config.outer_tol * std::max(1.0, std::abs(prev))) {
        report.stop_reason = LnmlStop::kToleranceReached;
        break;
      }
    }
  }

  report.final_metric = std::move(metric);
  report.final_assignment = std::move(assignment);
  return report;
}

}  // namespace lnml
