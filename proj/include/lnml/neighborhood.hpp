#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lnml/core.hpp"

namespace lnml {

// ---------------------------------------------------------------------------
// Feasibility of the neighborhood budget against per-instance candidate
// counts m_i: every m_i >= k_min, and the truncated capacity
// sum_i min(m_i, k_max) must cover k_av * n (which in turn covers n * k_min).
// ---------------------------------------------------------------------------
struct FeasibilityVerdict {
  bool feasible = true;
  std::string reason;       // empty when feasible
  long long required = 0;   // k_av * n
  long long capacity = 0;   // sum_i min(m_i, k_max)
};

struct BudgetError : Error {
  BudgetError(const std::string& what, FeasibilityVerdict v)
      : Error(what), verdict(std::move(v)) {}
  FeasibilityVerdict verdict;
};

struct SolveDiagnostics {
  double objective_value = 0.0;
  long long selected_count = 0;
  std::map<int, int> per_instance_histogram;  // neighbor count -> #instances
};

inline FeasibilityVerdict check_feasibility(const PairCostTable& costs,
                                            const NeighborhoodBudget& budget) {
  const int n = costs.n();
  FeasibilityVerdict v;
  v.required = static_cast<long long>(budget.k_av) * n;
  for (int i = 0; i < n; ++i) {
    const long long m = static_cast<long long>(costs.rows[static_cast<std::size_t>(i)].size());
    if (m < budget.k_min) {
      v.feasible = false;
      v.reason = "instance " + std::to_string(i) + " has only " + std::to_string(m) +
                 " same-class candidates, fewer than k_min = " + std::to_string(budget.k_min);
      return v;
    }
    v.capacity += std::min(m, static_cast<long long>(budget.k_max));
  }
  if (v.capacity < v.required) {
    v.feasible = false;
    v.reason = "total capacity sum_i min(m_i, k_max) = " + std::to_string(v.capacity) +
               " cannot reach k_av * n = " + std::to_string(v.required);
    return v;
  }
  if (v.required < static_cast<long long>(budget.k_min) * n) {
    // Unreachable while the budget invariant k_av >= k_min holds; kept so the
    // verdict covers every stated condition.
    v.feasible = false;
    v.reason = "k_av * n is below n * k_min";
  }
  return v;
}

namespace detail {

struct CandidateRef {
  double cost;
  int j;
  int i;
};

// Strict total order used everywhere a selection tie must break:
// cheaper first, then lower candidate index j, then lower instance index i.
inline bool candidate_less(const CandidateRef& a, const CandidateRef& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  if (a.j != b.j) return a.j < b.j;
  return a.i < b.i;
}

inline SolveDiagnostics make_diagnostics(const NeighborhoodAssignment& assignment,
                                         double objective) {
  SolveDiagnostics diag;
  diag.objective_value = objective;
  diag.selected_count = static_cast<long long>(assignment.size());
  for (int i = 0; i < assignment.n(); ++i) diag.per_instance_histogram[assignment.per_instance_counts[i]]++;
  return diag;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact solver for the neighborhood LP. Total unimodularity makes the
// relaxation tight, so the binary optimum is found combinatorially:
//   phase 1: every instance takes its k_min cheapest candidates;
//   phase 2: the remaining pairs are added globally cheapest-first, skipping
//            instances already holding k_max, until exactly k_av * n pairs.
// Phase 2 is the greedy for a minimum-weight basis of the partition matroid
// truncated at the total; phase 1 picks survive every optimal exchange.
// ---------------------------------------------------------------------------
inline std::pair<NeighborhoodAssignment, SolveDiagnostics> solve_assignment(
    const PairCostTable& costs, const NeighborhoodBudget& budget) {
  costs.validate_finite();
  const FeasibilityVerdict verdict = check_feasibility(costs, budget);
  if (!verdict.feasible) throw BudgetError("solve_assignment: infeasible budget: " + verdict.reason, verdict);

  const int n = costs.n();
  const long long required = verdict.required;
  std::vector<std::pair<int, int>> chosen;
  chosen.reserve(static_cast<std::size_t>(required));
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  double objective = 0.0;
  std::vector<detail::CandidateRef> leftovers;
  leftovers.reserve(costs.total_pairs());

  for (int i = 0; i < n; ++i) {
    const auto& row = costs.rows[static_cast<std::size_t>(i)];
    std::vector<detail::CandidateRef> sorted_row;
    sorted_row.reserve(row.size());
    for (const auto& [j, cost] : row) sorted_row.push_back({cost, j, i});
    std::sort(sorted_row.begin(), sorted_row.end(), detail::candidate_less);
    for (std::size_t r = 0; r < sorted_row.size(); ++r) {
      if (static_cast<int>(r) < budget.k_min) {
        chosen.emplace_back(i, sorted_row[r].j);
        objective += sorted_row[r].cost;
        counts[static_cast<std::size_t>(i)]++;
      } else {
        leftovers.push_back(sorted_row[r]);
      }
    }
  }

  long long total = static_cast<long long>(budget.k_min) * n;
  std::sort(leftovers.begin(), leftovers.end(), detail::candidate_less);
  for (const auto& cand : leftovers) {
    if (total == required) break;
    if (counts[static_cast<std::size_t>(cand.i)] == budget.k_max) continue;
    chosen.emplace_back(cand.i, cand.j);
    objective += cand.cost;
    counts[static_cast<std::size_t>(cand.i)]++;
    ++total;
  }
  if (total != required)
    throw NumericError("solve_assignment: internal error, feasible instance not filled");

  NeighborhoodAssignment assignment = NeighborhoodAssignment::from_pairs(n, std::move(chosen));
  return {assignment, detail::make_diagnostics(assignment, objective)};
}

// ---------------------------------------------------------------------------
// Enumeration oracle for small instances (<= 25 candidate pairs): walks every
// binary vector satisfying the row and total constraints and returns the
// minimum-objective one. Equal objectives break exactly as the greedy does:
// the returned set maximizes sum(2^-(rank+1)) over its pairs, rank being the
// position in the global (cost, j, i) order, which provably selects the
// greedy's pair set. Powers 2^-1 .. 2^-25 sum exactly in a double.
// ---------------------------------------------------------------------------
inline constexpr std::size_t kOracleMaxPairs = 25;

inline std::pair<NeighborhoodAssignment, SolveDiagnostics> solve_assignment_oracle(
    const PairCostTable& costs, const NeighborhoodBudget& budget) {
  costs.validate_finite();
  if (costs.total_pairs() > kOracleMaxPairs)
    throw ContractError("solve_assignment_oracle: instance too large (" +
                        std::to_string(costs.total_pairs()) + " pairs, bound " +
                        std::to_string(kOracleMaxPairs) + ")");
  const FeasibilityVerdict verdict = check_feasibility(costs, budget);
  if (!verdict.feasible)
    throw BudgetError("solve_assignment_oracle: infeasible budget: " + verdict.reason, verdict);

  const int n = costs.n();
  const long long required = verdict.required;

  // Global rank under the greedy's strict order -> preference weights.
  std::vector<detail::CandidateRef> all;
  all.reserve(costs.total_pairs());
  for (int i = 0; i < n; ++i)
    for (const auto& [j, cost] : costs.rows[static_cast<std::size_t>(i)]) all.push_back({cost, j, i});
  std::sort(all.begin(), all.end(), detail::candidate_less);
  // pref_weight[i] keyed per row/candidate position.
  std::vector<std::vector<double>> pref(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    pref[static_cast<std::size_t>(i)].resize(costs.rows[static_cast<std::size_t>(i)].size(), 0.0);
  for (std::size_t rank = 0; rank < all.size(); ++rank) {
    const auto& cand = all[rank];
    const auto& row = costs.rows[static_cast<std::size_t>(cand.i)];
    for (std::size_t pos = 0; pos < row.size(); ++pos)
      if (row[pos].first == cand.j) pref[static_cast<std::size_t>(cand.i)][pos] = std::ldexp(1.0, -static_cast<int>(rank + 1));
  }

  // Per-row bounds for pruning.
  std::vector<int> row_min(static_cast<std::size_t>(n)), row_max(static_cast<std::size_t>(n));
  std::vector<double> row_cost_lb(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& row = costs.rows[static_cast<std::size_t>(i)];
    const int m = static_cast<int>(row.size());
    row_min[static_cast<std::size_t>(i)] = budget.k_min;
    row_max[static_cast<std::size_t>(i)] = std::min(budget.k_max, m);
    std::vector<double> sorted_costs;
    sorted_costs.reserve(row.size());
    for (const auto& [j, cost] : row) sorted_costs.push_back(cost);
    std::sort(sorted_costs.begin(), sorted_costs.end());
    double prefix = 0.0, best = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= row_max[static_cast<std::size_t>(i)]; ++s) {
      if (s > 0) prefix += sorted_costs[static_cast<std::size_t>(s - 1)];
      if (s >= row_min[static_cast<std::size_t>(i)]) best = std::min(best, prefix);
    }
    row_cost_lb[static_cast<std::size_t>(i)] = best;
  }
  std::vector<long long> suffix_min(static_cast<std::size_t>(n) + 1, 0),
      suffix_max(static_cast<std::size_t>(n) + 1, 0);
  std::vector<double> suffix_lb(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = n - 1; i >= 0; --i) {
    suffix_min[static_cast<std::size_t>(i)] = suffix_min[static_cast<std::size_t>(i) + 1] + row_min[static_cast<std::size_t>(i)];
    suffix_max[static_cast<std::size_t>(i)] = suffix_max[static_cast<std::size_t>(i) + 1] + row_max[static_cast<std::size_t>(i)];
    suffix_lb[static_cast<std::size_t>(i)] = suffix_lb[static_cast<std::size_t>(i) + 1] + row_cost_lb[static_cast<std::size_t>(i)];
  }

  double best_cost = std::numeric_limits<double>::infinity();
  double best_pref = -1.0;
  std::vector<std::uint32_t> best_masks;
  std::vector<std::uint32_t> masks(static_cast<std::size_t>(n), 0);

  // Depth-first enumeration over per-row candidate subsets.
  auto dfs = [&](auto&& self, int row, long long taken, double cost, double preference) -> void {
    if (taken + suffix_min[static_cast<std::size_t>(row)] > required) return;
    if (taken + suffix_max[static_cast<std::size_t>(row)] < required) return;
    // Bound prune must stay strict so exact-cost ties reach the leaf comparison.
    if (cost + suffix_lb[static_cast<std::size_t>(row)] > best_cost) return;
    if (row == n) {
      if (taken != required) return;
      if (cost < best_cost || (cost == best_cost && preference > best_pref)) {
        best_cost = cost;
        best_pref = preference;
        best_masks = masks;
      }
      return;
    }
    const auto& cands = costs.rows[static_cast<std::size_t>(row)];
    const int m = static_cast<int>(cands.size());
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      const int size = __builtin_popcount(mask);
      if (size < row_min[static_cast<std::size_t>(row)] || size > row_max[static_cast<std::size_t>(row)]) continue;
      double row_cost = 0.0, row_pref = 0.0;
      for (int b = 0; b < m; ++b)
        if (mask & (1u << b)) {
          row_cost += cands[static_cast<std::size_t>(b)].second;
          row_pref += pref[static_cast<std::size_t>(row)][static_cast<std::size_t>(b)];
        }
      masks[static_cast<std::size_t>(row)] = mask;
      self(self, row + 1, taken + size, cost + row_cost, preference + row_pref);
    }
  };
  dfs(dfs, 0, 0, 0.0, 0.0);

  if (!std::isfinite(best_cost))
    throw NumericError("solve_assignment_oracle: no feasible assignment enumerated");

  std::vector<std::pair<int, int>> chosen;
  double objective = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& cands = costs.rows[static_cast<std::size_t>(i)];
    for (int b = 0; b < static_cast<int>(cands.size()); ++b)
      if (best_masks[static_cast<std::size_t>(i)] & (1u << b)) {
        chosen.emplace_back(i, cands[static_cast<std::size_t>(b)].first);
        objective += cands[static_cast<std::size_t>(b)].second;
      }
  }
  NeighborhoodAssignment assignment = NeighborhoodAssignment::from_pairs(n, std::move(chosen));
  return {assignment, detail::make_diagnostics(assignment, objective)};
}

// Debug dump: one "i,j,cost" row per selected pair, in pair order.
inline void dump_assignment_csv(std::ostream& out, const NeighborhoodAssignment& assignment,
                                const PairCostTable& costs) {
  out << "i,j,cost\n";
  for (const auto& [i, j] : assignment.pairs) {
    const auto& row = costs.rows[static_cast<std::size_t>(i)];
    const auto it = std::find_if(row.begin(), row.end(),
                                 [j = j](const std::pair<int, double>& c) { return c.first == j; });
    if (it == row.end())
      throw ContractError("dump_assignment_csv: pair (" + std::to_string(i) + ", " +
                          std::to_string(j) + ") missing from cost table");
    out << i << ',' << j << ',' << it->second << '\n';
  }
}

}  // namespace lnml
