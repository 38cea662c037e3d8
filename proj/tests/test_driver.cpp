#include "lnml/driver.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "lnml/core.hpp"
#include "lnml/detail/common.hpp"

namespace {

using lnml::Dataset;
using lnml::IntVector;
using lnml::LnmlConfig;
using lnml::LnmlLearner;
using lnml::LnmlReport;
using lnml::Matrix;
using lnml::MetricMatrix;
using lnml::NeighborhoodAssignment;
using lnml::NeighborhoodBudget;
using lnml::Vector;

Dataset random_dataset(std::mt19937_64& rng, int n, int d, int classes, int min_per_class) {
  n = std::max(n, classes * min_per_class);
  Dataset data;
  data.instances = Matrix(n, d);
  data.labels = IntVector(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) data.instances(i, c) = lnml::detail::uniform_real(rng, -1.0, 1.0);
    data.labels[i] = i < classes * min_per_class ? i % classes + 1
                                                 : lnml::detail::uniform_int(rng, 1, classes);
  }
  return data;
}

NeighborhoodAssignment euclidean_knn_assignment(const Dataset& data, int k) {
  const Matrix d = lnml::pairwise_squared_distances(MetricMatrix::identity(data.dim()), data);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < data.n(); ++i) {
    std::vector<std::pair<double, int>> mates;
    for (int j = 0; j < data.n(); ++j)
      if (j != i && data.labels[j] == data.labels[i]) mates.emplace_back(d(i, j), j);
    std::sort(mates.begin(), mates.end());
    for (int t = 0; t < k && t < static_cast<int>(mates.size()); ++t)
      pairs.emplace_back(i, mates[t].second);
  }
  return NeighborhoodAssignment::from_pairs(data.n(), std::move(pairs));
}

LnmlConfig small_lmnn_config(int outer_iters) {
  LnmlConfig config;
  config.learner = LnmlLearner::kLnLmnn;
  config.budget = NeighborhoodBudget(1, 3, 2);
  config.max_outer_iters = outer_iters;
  config.lmnn.max_iters = 40;
  return config;
}

TEST(LnmlConfigValidation, McmlLearnerNeedsUniformBudget) {
  LnmlConfig config;
  config.learner = LnmlLearner::kLnMcml;
  config.budget = NeighborhoodBudget(1, 3, 2);
  EXPECT_THROW(config.validate(), lnml::ContractError);
  config.budget = NeighborhoodBudget(2, 2, 2);
  EXPECT_NO_THROW(config.validate());
}

TEST(LnmlConfigValidation, RejectsBadOuterFields) {
  LnmlConfig config;
  config.max_outer_iters = 0;
  EXPECT_THROW(config.validate(), lnml::ContractError);
  config.max_outer_iters = 20;
  config.outer_tol = 0.0;
  EXPECT_THROW(config.validate(), lnml::ContractError);
}

TEST(JointObjective, EmptyAssignmentIsZero) {
  std::mt19937_64 rng(5);
  const Dataset data = random_dataset(rng, 8, 2, 2, 3);
  const NeighborhoodAssignment empty = NeighborhoodAssignment::from_pairs(data.n(), {});
  EXPECT_EQ(lnml::joint_objective(empty, MetricMatrix::identity(2), data, LnmlConfig{}), 0.0);
}

TEST(JointObjective, MuZeroIsSumOfSquaredDistances) {
  std::mt19937_64 rng(7);
  const Dataset data = random_dataset(rng, 8, 3, 2, 3);
  const NeighborhoodAssignment p = euclidean_knn_assignment(data, 2);
  LnmlConfig config;
  config.lmnn.mu = 0.0;
  const MetricMatrix m = MetricMatrix::identity(3);
  double expected = 0.0;
  for (const auto& [i, j] : p.pairs)
    expected += lnml::mahalanobis_distance(m, data.instances.row(i).transpose(),
                                           data.instances.row(j).transpose());
  EXPECT_NEAR(lnml::joint_objective(p, m, data, config), expected, 1e-12);
}

TEST(JointObjective, MatchesLmnnLoss) {
  std::mt19937_64 rng(11);
  const Dataset data = random_dataset(rng, 10, 2, 2, 4);
  const NeighborhoodAssignment p = euclidean_knn_assignment(data, 2);
  const MetricMatrix m = MetricMatrix::identity(2);
  LnmlConfig config;
  config.lmnn.mu = 0.5;
  EXPECT_DOUBLE_EQ(lnml::joint_objective(p, m, data, config),
                   lnml::lmnn_loss(m, p, data, 0.5).total);
}

TEST(JointObjective, MatchesMcmlLossOnUniformAssignments) {
  std::mt19937_64 rng(13);
  const Dataset data = random_dataset(rng, 10, 2, 2, 4);
  const NeighborhoodAssignment p = euclidean_knn_assignment(data, 2);
  const MetricMatrix m = MetricMatrix::identity(2);
  LnmlConfig config;
  config.learner = LnmlLearner::kLnMcml;
  config.budget = NeighborhoodBudget(2, 2, 2);
  EXPECT_DOUBLE_EQ(lnml::joint_objective(p, m, data, config), lnml::mcml_loss(m, p, data, 2));
}

TEST(LnmlFit, SinglePassReducesToSolverPlusLearner) {
  std::mt19937_64 rng(17);
  const Dataset data = random_dataset(rng, 12, 2, 2, 5);
  const LnmlConfig config = small_lmnn_config(1);
  const MetricMatrix m0 = MetricMatrix::identity(2);

  const LnmlReport report = lnml_fit(data, config, m0);

  const lnml::PairCostTable costs = lnml::lmnn_pair_costs(m0, data, config.lmnn.mu);
  const NeighborhoodAssignment p1 = lnml::solve_assignment(costs, config.budget).first;
  const lnml::FitResult baseline = lnml::lmnn_fit(data, p1, m0, config.lmnn);

  EXPECT_EQ(report.outer_iterations_used, 1);
  ASSERT_EQ(report.outer_objective_trace.size(), 1u);
  ASSERT_EQ(report.assignment_change_trace.size(), 1u);
  EXPECT_EQ(report.assignment_change_trace[0], static_cast<int>(p1.size()));
  EXPECT_EQ(report.final_assignment.pairs, p1.pairs);
  EXPECT_TRUE((report.final_metric.entries - baseline.metric.entries).isZero(0.0));
  EXPECT_EQ(report.stop_reason, lnml::LnmlStop::kIterationCap);
}

TEST(LnmlFit, MuZeroUniformBudgetPicksEuclideanNearestNeighbors) {
  std::mt19937_64 rng(19);
  const Dataset data = random_dataset(rng, 14, 3, 2, 6);
  LnmlConfig config;
  config.budget = NeighborhoodBudget(3, 3, 3);
  config.max_outer_iters = 1;
  config.lmnn.mu = 0.0;
  config.lmnn.max_iters = 5;
  const LnmlReport report = lnml_fit(data, config, MetricMatrix::identity(3));
  const NeighborhoodAssignment expected = euclidean_knn_assignment(data, 3);
  EXPECT_EQ(report.final_assignment.pairs, expected.pairs);
}

TEST(LnmlFit, MatchesManualAlternationAndKeepsStepInvariants) {
  std::mt19937_64 rng(23);
  const Dataset data = random_dataset(rng, 16, 2, 2, 7);
  const LnmlConfig config = small_lmnn_config(6);
  const MetricMatrix m0 = MetricMatrix::identity(2);

  const LnmlReport report = lnml_fit(data, config, m0);

  // Re-run the alternation by hand on the public operations, checking the
  // P-step optimality and M-step descent inequalities at every iteration.
  MetricMatrix metric = m0;
  NeighborhoodAssignment assignment;
  bool have_assignment = false;
  std::vector<double> manual_trace;
  for (int iter = 1; iter <= config.max_outer_iters; ++iter) {
    const lnml::PairCostTable costs = lnml::lmnn_pair_costs(metric, data, config.lmnn.mu);
    const NeighborhoodAssignment next = lnml::solve_assignment(costs, config.budget).first;
    if (have_assignment && next.pairs == assignment.pairs) break;
    if (have_assignment) {
      const double before = lnml::joint_objective(assignment, metric, data, config);
      const double after = lnml::joint_objective(next, metric, data, config);
      EXPECT_LE(after, before + 1e-9 * std::max(1.0, std::abs(before)));
    }
    assignment = next;
    have_assignment = true;
    const double pre_fit = lnml::joint_objective(assignment, metric, data, config);
    metric = lnml::lmnn_fit(data, assignment, metric, config.lmnn).metric;
    const double post_fit = lnml::joint_objective(assignment, metric, data, config);
    EXPECT_LE(post_fit, pre_fit + 1e-9 * std::max(1.0, std::abs(pre_fit)));
    manual_trace.push_back(post_fit);
    if (manual_trace.size() >= 2) {
      const double prev = manual_trace[manual_trace.size() - 2];
      if (prev - post_fit < config.outer_tol * std::max(1.0, std::abs(prev))) break;
    }
  }

  ASSERT_EQ(report.outer_objective_trace.size(), manual_trace.size());
  for (std::size_t t = 0; t < manual_trace.size(); ++t)
    EXPECT_DOUBLE_EQ(report.outer_objective_trace[t], manual_trace[t]) << "iteration " << t + 1;
  EXPECT_TRUE((report.final_metric.entries - metric.entries).isZero(0.0));
}

TEST(LnmlFit, ObjectiveTraceNonIncreasingWithinTol) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 4; ++trial) {
    const Dataset data = random_dataset(rng, 18, 2 + trial % 2, 2, 7);
    LnmlConfig config = small_lmnn_config(8);
    config.lmnn.mu = trial % 2 == 0 ? 0.5 : 0.3;
    const LnmlReport report = lnml_fit(data, config, MetricMatrix::identity(data.dim()));
    const auto& trace = report.outer_objective_trace;
    ASSERT_EQ(static_cast<int>(trace.size()), report.outer_iterations_used);
    ASSERT_EQ(trace.size(), report.assignment_change_trace.size());
    for (std::size_t t = 1; t < trace.size(); ++t)
      EXPECT_LE(trace[t], trace[t - 1] + config.outer_tol * std::max(1.0, std::abs(trace[t - 1])))
          << "trial " << trial << " iteration " << t + 1;
  }
}

TEST(LnmlFit, ForcedAssignmentReachesFixedPoint) {
  // Two classes of two instances with budget (1,1,1): only one feasible
  // assignment exists, so the second outer pass must detect stabilization.
  Dataset data;
  data.instances = Matrix(4, 2);
  data.instances << 0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 1.0, 5.0;
  data.labels = IntVector(4);
  data.labels << 1, 1, 2, 2;
  LnmlConfig config;
  config.budget = NeighborhoodBudget(1, 1, 1);
  config.max_outer_iters = 10;
  config.lmnn.max_iters = 30;
  const LnmlReport report = lnml_fit(data, config, MetricMatrix::identity(2));
  EXPECT_EQ(report.stop_reason, lnml::LnmlStop::kAssignmentFixedPoint);
  EXPECT_EQ(report.outer_iterations_used, 1);
  const std::vector<std::pair<int, int>> forced = {{0, 1}, {1, 0}, {2, 3}, {3, 2}};
  EXPECT_EQ(report.final_assignment.pairs, forced);
}

TEST(LnmlFit, InfeasibleBudgetThrowsBudgetError) {
  std::mt19937_64 rng(31);
  Dataset data = random_dataset(rng, 9, 2, 3, 3);
  LnmlConfig config;
  config.budget = NeighborhoodBudget(4, 4, 4);  // classes of 3 have only 2 candidates
  EXPECT_THROW(lnml_fit(data, config, MetricMatrix::identity(2)), lnml::BudgetError);
}

TEST(LnmlFit, ProgressSinkSeesEveryCompletedIteration) {
  std::mt19937_64 rng(37);
  const Dataset data = random_dataset(rng, 12, 2, 2, 5);
  const LnmlConfig config = small_lmnn_config(5);
  std::vector<lnml::LnmlProgress> seen;
  const LnmlReport report = lnml_fit(data, config, MetricMatrix::identity(2),
                                     [&seen](const lnml::LnmlProgress& p) { seen.push_back(p); });
  ASSERT_EQ(static_cast<int>(seen.size()), report.outer_iterations_used);
  for (std::size_t t = 0; t < seen.size(); ++t) {
    EXPECT_EQ(seen[t].iteration, static_cast<int>(t) + 1);
    EXPECT_DOUBLE_EQ(seen[t].objective, report.outer_objective_trace[t]);
    EXPECT_EQ(seen[t].pairs_changed, report.assignment_change_trace[t]);
  }
}

TEST(LnmlFit, McmlLearnerKeepsUniformBudgetAndDescends) {
  std::mt19937_64 rng(41);
  const Dataset data = random_dataset(rng, 14, 2, 2, 6);
  LnmlConfig config;
  config.learner = LnmlLearner::kLnMcml;
  config.budget = NeighborhoodBudget(2, 2, 2);
  config.max_outer_iters = 6;
  config.mcml.max_iters = 40;
  const LnmlReport report = lnml_fit(data, config, MetricMatrix::identity(2));
  for (int i = 0; i < report.final_assignment.n(); ++i)
    EXPECT_EQ(report.final_assignment.per_instance_counts[i], 2);
  const auto& trace = report.outer_objective_trace;
  for (std::size_t t = 1; t < trace.size(); ++t)
    EXPECT_LE(trace[t], trace[t - 1] + config.outer_tol * std::max(1.0, std::abs(trace[t - 1])));
  EXPECT_GE(lnml::min_eigenvalue(report.final_metric.entries), -1e-8);
}

}  // namespace
