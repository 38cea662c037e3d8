#include "lnml/neighborhood.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lnml/detail/common.hpp"

namespace {

using lnml::IntVector;
using lnml::NeighborhoodAssignment;
using lnml::NeighborhoodBudget;
using lnml::PairCostTable;

PairCostTable table_from(const IntVector& labels,
                         const std::function<double(int, int)>& cost_fn) {
  PairCostTable table = PairCostTable::candidates_from_labels(labels);
  for (int i = 0; i < table.n(); ++i)
    for (auto& [j, cost] : table.rows[static_cast<std::size_t>(i)]) cost = cost_fn(i, j);
  return table;
}

// Test-local objective oracle, independent of the solver: row-wise sorted
// cost prefixes plus a DP over the running total. Any feasible assignment
// restricted to one row is dominated by that row's cheapest subset of equal
// size, so dp[row][taken] = min achievable cost is exact.
double dp_min_objective(const PairCostTable& costs, const NeighborhoodBudget& budget) {
  const int n = costs.n();
  const long long required = static_cast<long long>(budget.k_av) * n;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(static_cast<std::size_t>(required) + 1, inf);
  dp[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row_costs;
    for (const auto& [j, c] : costs.rows[static_cast<std::size_t>(i)]) row_costs.push_back(c);
    std::sort(row_costs.begin(), row_costs.end());
    const int hi = std::min<int>(budget.k_max, static_cast<int>(row_costs.size()));
    std::vector<double> prefix(static_cast<std::size_t>(hi) + 1, 0.0);
    for (int s = 1; s <= hi; ++s) prefix[static_cast<std::size_t>(s)] = prefix[static_cast<std::size_t>(s - 1)] + row_costs[static_cast<std::size_t>(s - 1)];
    std::vector<double> next(dp.size(), inf);
    for (std::size_t t = 0; t < dp.size(); ++t) {
      if (!std::isfinite(dp[t])) continue;
      for (int s = budget.k_min; s <= hi; ++s) {
        const std::size_t nt = t + static_cast<std::size_t>(s);
        if (nt >= next.size()) break;
        next[nt] = std::min(next[nt], dp[t] + prefix[static_cast<std::size_t>(s)]);
      }
    }
    dp.swap(next);
  }
  return dp[static_cast<std::size_t>(required)];
}

void expect_budget_satisfied(const NeighborhoodAssignment& p, const lnml::SolveDiagnostics& diag,
                             const NeighborhoodBudget& budget) {
  long long total = 0;
  for (int i = 0; i < p.n(); ++i) {
    total += p.per_instance_counts[i];
    EXPECT_GE(p.per_instance_counts[i], budget.k_min);
    EXPECT_LE(p.per_instance_counts[i], budget.k_max);
  }
  EXPECT_EQ(total, static_cast<long long>(budget.k_av) * p.n());
  EXPECT_EQ(diag.selected_count, total);
  for (const auto& [count, _] : diag.per_instance_histogram) {
    EXPECT_GE(count, budget.k_min);
    EXPECT_LE(count, budget.k_max);
  }
}

struct RandomInstance {
  IntVector labels;
  PairCostTable costs;
  NeighborhoodBudget budget;
};

// Random instances small enough for the enumeration oracle: class sizes <= 4
// keep the candidate-pair total within the oracle's 25-pair bound.
std::optional<RandomInstance> draw_instance(std::mt19937_64& rng, bool quantized_costs) {
  const int n = lnml::detail::uniform_int(rng, 2, 8);
  IntVector labels(n);
  int next_label = 1;
  std::vector<int> sizes;
  int left = n;
  while (left > 0) {
    const int size = std::min(left, lnml::detail::uniform_int(rng, 1, 4));
    sizes.push_back(size);
    left -= size;
  }
  int idx = 0;
  for (int size : sizes) {
    for (int k = 0; k < size; ++k) labels[idx++] = next_label;
    next_label++;
  }
  std::size_t pair_count = 0;
  for (int size : sizes) pair_count += static_cast<std::size_t>(size) * (size - 1);
  if (pair_count > lnml::kOracleMaxPairs || pair_count == 0) return std::nullopt;

  PairCostTable costs = table_from(labels, [&](int, int) {
    if (quantized_costs) return 0.25 * lnml::detail::uniform_int(rng, -2, 2);
    return lnml::detail::uniform_real(rng, -1.0, 1.0);
  });

  int min_m = std::numeric_limits<int>::max(), max_m = 0;
  for (const auto& row : costs.rows) {
    min_m = std::min(min_m, static_cast<int>(row.size()));
    max_m = std::max(max_m, static_cast<int>(row.size()));
  }
  const int k_min = lnml::detail::uniform_int(rng, 0, min_m);
  const int k_max = lnml::detail::uniform_int(rng, std::max(1, k_min), std::max(1, max_m));
  long long capacity = 0;
  for (const auto& row : costs.rows) capacity += std::min<long long>(static_cast<long long>(row.size()), k_max);
  const int k_av_hi = std::min<long long>(k_max, capacity / n);
  const int k_av_lo = std::max(1, k_min);
  if (k_av_lo > k_av_hi) return std::nullopt;
  const int k_av = lnml::detail::uniform_int(rng, k_av_lo, k_av_hi);
  return RandomInstance{labels, std::move(costs), NeighborhoodBudget(k_min, k_max, k_av)};
}

TEST(CheckFeasibility, SmallClassBelowKmin) {
  IntVector labels(4);
  labels << 1, 1, 2, 2;  // every instance has exactly 1 candidate
  const auto costs = table_from(labels, [](int, int) { return 1.0; });
  const auto verdict = lnml::check_feasibility(costs, NeighborhoodBudget(2, 2, 2));
  EXPECT_FALSE(verdict.feasible);
  EXPECT_NE(verdict.reason.find("k_min"), std::string::npos);
}

TEST(CheckFeasibility, UniformBudgetOnLargeClassesIsFeasible) {
  IntVector labels(8);
  labels << 1, 1, 1, 1, 2, 2, 2, 2;  // classes of size k_max + 1 = 4
  const auto costs = table_from(labels, [](int, int) { return 0.0; });
  const auto verdict = lnml::check_feasibility(costs, NeighborhoodBudget(3, 3, 3));
  EXPECT_TRUE(verdict.feasible);
}

// Classes {4,4,2} with budget (1,3,3): capacity 8*3 + 2*1 = 26 < 30 = k_av*n.
TEST(CheckFeasibility, CapacityArithmeticExample) {
  IntVector labels(10);
  labels << 1, 1, 1, 1, 2, 2, 2, 2, 3, 3;
  const auto costs = table_from(labels, [](int, int) { return 0.0; });
  const auto verdict = lnml::check_feasibility(costs, NeighborhoodBudget(1, 3, 3));
  EXPECT_FALSE(verdict.feasible);
  EXPECT_EQ(verdict.capacity, 26);
  EXPECT_EQ(verdict.required, 30);
}

TEST(SolveAssignment, UniformBudgetDecouplesIntoPerInstanceCheapest) {
  IntVector labels(6);
  labels << 1, 1, 1, 2, 2, 2;
  // distinct costs so the expected picks are unambiguous
  const auto costs = table_from(labels, [](int i, int j) { return std::fmod(2.7 * i + 1.3 * j, 5.0); });
  const auto [p, diag] = lnml::solve_assignment(costs, NeighborhoodBudget(2, 2, 2));
  expect_budget_satisfied(p, diag, NeighborhoodBudget(2, 2, 2));
  for (int i = 0; i < 6; ++i) {
    ASSERT_EQ(p.per_instance_counts[i], 2);
    // expected: the two cheapest candidates of row i
    std::vector<std::pair<double, int>> row;
    for (const auto& [j, c] : costs.rows[static_cast<std::size_t>(i)]) row.emplace_back(c, j);
    std::sort(row.begin(), row.end());
    EXPECT_TRUE(p.contains(i, row[0].second));
    EXPECT_TRUE(p.contains(i, row[1].second));
  }
}

// Spec's 6-instance line instance: F_ij = |i - j|, budget (1, 3, 2).
// Hand-derived optimum: all ten |i-j| = 1 pairs are selectable within row
// caps, leaving two more pairs at cost 2, so the optimum objective is 14.
// Under the (cost, j, i) tie-break, phase 1 takes (0,1),(1,0),(2,1),(3,2),
// (4,3),(5,4); phase 2 adds the remaining cost-1 pairs (1,2),(2,3),(3,4),
// (4,5) and then the cost-2 pairs (2,0),(3,1).
TEST(SolveAssignment, LineInstanceMatchesBruteForce) {
  IntVector labels = IntVector::Ones(6);
  const auto costs = table_from(labels, [](int i, int j) { return double(std::abs(i - j)); });
  const NeighborhoodBudget budget(1, 3, 2);
  const auto [p, diag] = lnml::solve_assignment(costs, budget);
  expect_budget_satisfied(p, diag, budget);
  EXPECT_DOUBLE_EQ(diag.objective_value, 14.0);
  EXPECT_DOUBLE_EQ(dp_min_objective(costs, budget), 14.0);
  const std::vector<std::pair<int, int>> expected = {{0, 1}, {1, 0}, {1, 2}, {2, 0},
                                                     {2, 1}, {2, 3}, {3, 1}, {3, 2},
                                                     {3, 4}, {4, 3}, {4, 5}, {5, 4}};
  EXPECT_EQ(p.pairs, expected);
}

TEST(SolveAssignment, EqualCostsGiveBudgetTimesCost) {
  IntVector labels(6);
  labels << 1, 1, 1, 1, 1, 1;
  const double cost = 0.75;
  const auto costs = table_from(labels, [=](int, int) { return cost; });
  const NeighborhoodBudget budget(1, 4, 3);
  const auto [p, diag] = lnml::solve_assignment(costs, budget);
  expect_budget_satisfied(p, diag, budget);
  EXPECT_NEAR(diag.objective_value, budget.k_av * 6 * cost, 1e-12);
}

TEST(SolveAssignment, InfeasibleBudgetThrowsWithVerdict) {
  IntVector labels(4);
  labels << 1, 1, 2, 2;
  const auto costs = table_from(labels, [](int, int) { return 1.0; });
  try {
    lnml::solve_assignment(costs, NeighborhoodBudget(2, 3, 2));
    FAIL() << "expected BudgetError";
  } catch (const lnml::BudgetError& e) {
    EXPECT_FALSE(e.verdict.feasible);
    EXPECT_FALSE(e.verdict.reason.empty());
  }
}

TEST(SolveAssignmentOracle, TwoInstanceExample) {
  IntVector labels(2);
  labels << 1, 1;
  auto costs = table_from(labels, [](int i, int) { return i == 0 ? 5.0 : 3.0; });
  const auto [p, diag] = lnml::solve_assignment_oracle(costs, NeighborhoodBudget(0, 1, 1));
  EXPECT_EQ(p.size(), 2u);
  EXPECT_TRUE(p.contains(0, 1));
  EXPECT_TRUE(p.contains(1, 0));
  EXPECT_DOUBLE_EQ(diag.objective_value, 8.0);
}

TEST(SolveAssignmentOracle, RejectsOversizedInstances) {
  IntVector labels = IntVector::Ones(6);  // 30 ordered pairs > 25
  const auto costs = table_from(labels, [](int, int) { return 0.0; });
  EXPECT_THROW(lnml::solve_assignment_oracle(costs, NeighborhoodBudget(1, 3, 2)),
               lnml::ContractError);
}

TEST(SolveAssignmentOracle, InfeasibleThrows) {
  IntVector labels(3);
  labels << 1, 1, 2;  // class 2 is a singleton: zero candidates
  const auto costs = table_from(labels, [](int, int) { return 0.0; });
  EXPECT_THROW(lnml::solve_assignment_oracle(costs, NeighborhoodBudget(1, 1, 1)),
               lnml::BudgetError);
}

TEST(SolverProperties, GreedyMatchesOracleObjectiveOnRandomInstances) {
  std::mt19937_64 rng(2024);
  int done = 0;
  while (done < 200) {
    auto inst = draw_instance(rng, false);
    if (!inst) continue;
    ++done;
    const auto [fast, fast_diag] = lnml::solve_assignment(inst->costs, inst->budget);
    const auto [slow, slow_diag] = lnml::solve_assignment_oracle(inst->costs, inst->budget);
    EXPECT_NEAR(fast_diag.objective_value, slow_diag.objective_value, 1e-12);
    expect_budget_satisfied(fast, fast_diag, inst->budget);
    expect_budget_satisfied(slow, slow_diag, inst->budget);
    fast.validate(inst->labels);
    slow.validate(inst->labels);
    EXPECT_NEAR(fast_diag.objective_value, dp_min_objective(inst->costs, inst->budget), 1e-10);
  }
}

// With heavily tied costs the greedy and the oracle must return the exact
// same pair set, not just the same objective: both resolve ties through the
// (cost, j, i) order.
TEST(SolverProperties, TieBreakReturnsIdenticalSets) {
  std::mt19937_64 rng(4711);
  int done = 0;
  while (done < 150) {
    auto inst = draw_instance(rng, true);
    if (!inst) continue;
    ++done;
    const auto [fast, fast_diag] = lnml::solve_assignment(inst->costs, inst->budget);
    const auto [slow, slow_diag] = lnml::solve_assignment_oracle(inst->costs, inst->budget);
    EXPECT_EQ(fast.pairs, slow.pairs);
  }
}

// Lowering the globally cheapest pair's cost can never push it out of the
// solution (exchange property spot check).
TEST(SolverProperties, MonotoneResponseOfCheapestPair) {
  std::mt19937_64 rng(99);
  int done = 0;
  while (done < 100) {
    auto inst = draw_instance(rng, false);
    if (!inst) continue;
    ++done;
    // locate the global (cost, j, i) minimum
    int best_i = -1, best_j = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int i = 0; i < inst->costs.n(); ++i)
      for (const auto& [j, c] : inst->costs.rows[static_cast<std::size_t>(i)]) {
        const bool better = c < best_cost || (c == best_cost && (j < best_j || (j == best_j && i < best_i)));
        if (better) {
          best_cost = c;
          best_i = i;
          best_j = j;
        }
      }
    auto lowered = inst->costs;
    for (auto& [j, c] : lowered.rows[static_cast<std::size_t>(best_i)])
      if (j == best_j) c = best_cost - 1.0;
    const auto [p, diag] = lnml::solve_assignment(lowered, inst->budget);
    EXPECT_TRUE(p.contains(best_i, best_j));
  }
}

TEST(DumpAssignmentCsv, EmitsTriples) {
  IntVector labels(4);
  labels << 1, 1, 1, 1;
  const auto costs = table_from(labels, [](int i, int j) { return double(i + j); });
  const auto [p, diag] = lnml::solve_assignment(costs, NeighborhoodBudget(1, 1, 1));
  std::ostringstream out;
  lnml::dump_assignment_csv(out, p, costs);
  EXPECT_EQ(out.str(), "i,j,cost\n0,1,1\n1,0,1\n2,0,2\n3,0,3\n");
}

}  // namespace
