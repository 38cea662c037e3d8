#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lnml/core.hpp"
#include "lnml/detail/common.hpp"
#include "lnml/errors.hpp"

namespace lnml {

// ---------------------------------------------------------------------------
// Fold plans

struct FoldPlan {
  std::vector<int> fold_of;           // length n, values in {1..folds}
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;  // classes too small to reach every fold

  int n() const { return static_cast<int>(fold_of.size()); }

  std::vector<int> test_indices(int fold) const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (fold_of[static_cast<std::size_t>(i)] == fold) out.push_back(i);
    return out;
  }

  std::vector<int> train_indices(int fold) const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (fold_of[static_cast<std::size_t>(i)] != fold) out.push_back(i);
    return out;
  }
};

// Stratified assignment: each class is shuffled and dealt round robin into the
// folds, with the dealing position carried across classes so global fold sizes
// also differ by at most one. Classes smaller than the fold count cannot reach
// every fold; they are still spread out, and the plan records a warning.
inline FoldPlan make_fold_plan(const IntVector& labels, int folds, std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (n == 0) throw ContractError("make_fold_plan: empty label vector");
  if (folds < 2) throw ContractError("make_fold_plan: folds must be >= 2, got " + std::to_string(folds));
  if (folds > n)
    throw ContractError("make_fold_plan: " + std::to_string(folds) + " folds exceed " +
                        std::to_string(n) + " instances");

  std::map<int, std::vector<int>> members;
  for (int i = 0; i < n; ++i) members[labels[i]].push_back(i);

  FoldPlan plan;
  plan.fold_of.assign(static_cast<std::size_t>(n), 0);
  plan.folds = folds;
  plan.seed = seed;

  std::mt19937_64 rng(detail::seed_combine(seed, 0x666f6c6470ULL));
  int next = 0;
  for (auto& [label, rows] : members) {
    if (static_cast<int>(rows.size()) < folds)
      plan.warnings.push_back("class " + std::to_string(label) + " has " +
                              std::to_string(rows.size()) + " instances for " +
                              std::to_string(folds) + " folds; it cannot reach every fold");
    detail::fisher_yates(rows, rng);
    for (int row : rows) {
      plan.fold_of[static_cast<std::size_t>(row)] = next % folds + 1;
      ++next;
    }
  }
  return plan;
}

inline Dataset subset_dataset(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.instances.resize(static_cast<Eigen::Index>(rows.size()), data.instances.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  out.feature_names = data.feature_names;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    if (src < 0 || src >= data.n())
      throw ContractError("subset_dataset: row index " + std::to_string(src) + " out of range");
    out.instances.row(static_cast<Eigen::Index>(r)) = data.instances.row(src);
    out.labels[static_cast<Eigen::Index>(r)] = data.labels[src];
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-nearest-neighbor prediction

namespace detail {

// D(q, i) = (x_q - x_i)' M (x_q - x_i), expanded so the cross term is a single
// matrix product. Small negatives from cancellation are clamped to zero.
inline Matrix cross_squared_distances(const MetricMatrix& metric, const Matrix& queries,
                                      const Matrix& train_points) {
  const Matrix qm = queries * metric.entries;
  const Matrix tm = train_points * metric.entries;
  const Vector qq = (qm.array() * queries.array()).rowwise().sum().matrix();
  const Vector tt = (tm.array() * train_points.array()).rowwise().sum().matrix();
  Matrix d = -2.0 * (qm * train_points.transpose());
  d.colwise() += qq;
  d.rowwise() += tt.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

// Majority vote over the k nearest training instances. Distance ties resolve
// toward the lower training index, vote ties toward the smaller class label,
// so predictions are reproducible regardless of input order.
inline IntVector knn_predict(const MetricMatrix& metric, const Dataset& train,
                             const Matrix& queries, int k) {
  if (train.n() == 0) throw ContractError("knn_predict: empty training set");
  if (train.labels.size() != train.n())
    throw ContractError("knn_predict: label count does not match the training set");
  if (train.labels.minCoeff() < 1) throw ContractError("knn_predict: labels must be >= 1");
  if (!train.instances.allFinite() || !queries.allFinite())
    throw ContractError("knn_predict: non-finite feature value");
  require_valid_metric(metric, "knn_predict");
  if (metric.dim() != train.dim())
    throw ContractError("knn_predict: metric dimension does not match the training data");
  if (queries.cols() != train.instances.cols())
    throw ContractError("knn_predict: query dimension does not match the training data");
  if (k < 1 || k > train.n())
    throw ContractError("knn_predict: k must lie in [1, " + std::to_string(train.n()) +
                        "], got " + std::to_string(k));

  const Matrix dist = detail::cross_squared_distances(metric, queries, train.instances);
  IntVector out(queries.rows());
  std::vector<std::pair<double, int>> order(static_cast<std::size_t>(train.n()));
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (int i = 0; i < train.n(); ++i) order[static_cast<std::size_t>(i)] = {dist(q, i), i};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    std::map<int, int> votes;
    for (int t = 0; t < k; ++t) ++votes[train.labels[order[static_cast<std::size_t>(t)].second]];
    int best_label = 0;
    int best_count = 0;
    for (const auto& [label, count] : votes) {
      if (count > best_count) {
        best_label = label;
        best_count = count;
      }
    }
    out[q] = best_label;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

using Predictor = std::function<IntVector(const Matrix&)>;
// Called once per fold with the training complement and a fold-specific seed;
// returns the predictor used on that fold's held-out instances.
using TrainProcedure = std::function<Predictor(const Dataset&, std::uint64_t)>;

struct CvResult {
  IntVector predictions;  // out-of-fold prediction for every instance
  double accuracy = 0.0;
  FoldPlan plan;
};

inline CvResult cross_validate(const Dataset& data, const TrainProcedure& pipeline, int folds,
                               std::uint64_t seed, int workers = 1) {
  validate_dataset(data);
  if (!pipeline) throw ContractError("cross_validate: empty pipeline handle");

  CvResult result;
  result.plan = make_fold_plan(data.labels, folds, seed);
  result.predictions = IntVector::Constant(data.n(), 0);

  // Fold failures are collected rather than rethrown from the worker pool so
  // the error can name every fold that went down, not just the first.
  std::vector<std::string> fold_errors(static_cast<std::size_t>(folds));
  detail::parallel_for(folds, workers, [&](int f) {
    const int fold = f + 1;
    try {
      const std::vector<int> test_rows = result.plan.test_indices(fold);
      const Dataset train = subset_dataset(data, result.plan.train_indices(fold));
      Matrix queries(static_cast<Eigen::Index>(test_rows.size()), data.instances.cols());
      for (std::size_t t = 0; t < test_rows.size(); ++t)
        queries.row(static_cast<Eigen::Index>(t)) = data.instances.row(test_rows[t]);

      const Predictor predict = pipeline(train, detail::seed_combine(seed, static_cast<std::uint64_t>(fold)));
      if (!predict) throw ContractError("pipeline returned an empty predictor");
      const IntVector preds = predict(queries);
      if (preds.size() != static_cast<Eigen::Index>(test_rows.size()))
        throw ContractError("predictor returned " + std::to_string(preds.size()) +
                            " labels for " + std::to_string(test_rows.size()) + " queries");
      for (std::size_t t = 0; t < test_rows.size(); ++t)
        result.predictions[test_rows[t]] = preds[static_cast<Eigen::Index>(t)];
    } catch (const std::exception& e) {
      fold_errors[static_cast<std::size_t>(f)] = e.what();
    }
  });

  std::string aggregated;
  for (int f = 0; f < folds; ++f) {
    if (fold_errors[static_cast<std::size_t>(f)].empty()) continue;
    if (!aggregated.empty()) aggregated += "; ";
    aggregated += "fold " + std::to_string(f + 1) + ": " + fold_errors[static_cast<std::size_t>(f)];
  }
  if (!aggregated.empty()) throw Error("cross_validate: " + aggregated);

  int correct = 0;
  for (int i = 0; i < data.n(); ++i) correct += result.predictions[i] == data.labels[i];
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.n());
  return result;
}

// ---------------------------------------------------------------------------
// McNemar's test

// Two-sided p-value for paired classifiers. Small discordant counts use the
// exact binomial test with parameter 0.5; from exact_threshold up it switches
// to the continuity-corrected chi-square statistic (|b - c| - 1)^2 / (b + c)
// on one degree of freedom.
inline double mcnemar_test(const IntVector& preds_a, const IntVector& preds_b,
                           const IntVector& truth, int exact_threshold = 25) {
  if (preds_a.size() != truth.size() || preds_b.size() != truth.size())
    throw ContractError("mcnemar_test: prediction and truth lengths differ");

  int b = 0, c = 0;
  for (Eigen::Index t = 0; t < truth.size(); ++t) {
    const bool right_a = preds_a[t] == truth[t];
    const bool right_b = preds_b[t] == truth[t];
    b += right_a && !right_b;
    c += !right_a && right_b;
  }
  const int m = b + c;
  if (m == 0) return 1.0;

  if (m < exact_threshold) {
    const int lo = std::min(b, c);
    double coeff = 1.0;  // C(m, x), built up incrementally; exact for m < 25
    double tail = 0.0;
    for (int x = 0; x <= lo; ++x) {
      tail += coeff;
      coeff = coeff * (m - x) / (x + 1);
    }
    return std::min(1.0, 2.0 * std::ldexp(tail, -m));
  }

  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  const double stat = diff * diff / static_cast<double>(m);
  return std::erfc(std::sqrt(stat / 2.0));  // chi-square(1) upper tail
}

// ---------------------------------------------------------------------------
// Pairwise rank scores

// Each unordered pair hands out exactly one point: all of it to the
// significantly better algorithm, half each otherwise.
inline std::vector<double> rank_scores(const std::vector<double>& accuracies,
                                       const Matrix& p_values, double alpha = 0.05) {
  const int algorithms = static_cast<int>(accuracies.size());
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ContractError("rank_scores: alpha must lie in (0, 1)");
  if (p_values.rows() != algorithms || p_values.cols() != algorithms)
    throw ContractError("rank_scores: p-value matrix does not match the accuracy count");

  std::vector<double> scores(static_cast<std::size_t>(algorithms), 0.0);
  for (int i = 0; i < algorithms; ++i) {
    for (int j = i + 1; j < algorithms; ++j) {
      const double p = p_values(i, j);
      if (p < alpha && accuracies[static_cast<std::size_t>(i)] != accuracies[static_cast<std::size_t>(j)]) {
        const int winner =
            accuracies[static_cast<std::size_t>(i)] > accuracies[static_cast<std::size_t>(j)] ? i : j;
        scores[static_cast<std::size_t>(winner)] += 1.0;
      } else {
        scores[static_cast<std::size_t>(i)] += 0.5;
        scores[static_cast<std::size_t>(j)] += 0.5;
      }
    }
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Comparison matrix

struct ComparisonMatrix {
  std::vector<std::string> algorithms;
  std::vector<double> accuracies;  // fractions in [0, 1]
  Matrix p_values;                 // symmetric, unit diagonal
  std::vector<double> scores;
  double alpha = 0.05;

  int count() const { return static_cast<int>(algorithms.size()); }

  void validate() const {
    const int a = count();
    if (static_cast<int>(accuracies.size()) != a || static_cast<int>(scores.size()) != a)
      throw ContractError("ComparisonMatrix: field lengths disagree");
    if (p_values.rows() != a || p_values.cols() != a)
      throw ContractError("ComparisonMatrix: p-value matrix shape mismatch");
    for (int i = 0; i < a; ++i) {
      if (p_values(i, i) != 1.0)
        throw ContractError("ComparisonMatrix: diagonal p-values must be 1");
      for (int j = 0; j < a; ++j) {
        const double p = p_values(i, j);
        if (!(p >= 0.0 && p <= 1.0))
          throw ContractError("ComparisonMatrix: p-value outside [0, 1]");
        if (p != p_values(j, i)) throw ContractError("ComparisonMatrix: p-values not symmetric");
      }
    }
    double total = 0.0;
    for (double s : scores) total += s;
    const double expected = 0.5 * a * (a - 1);
    if (std::abs(total - expected) > 1e-9)
      throw ContractError("ComparisonMatrix: scores do not sum to A(A-1)/2");
  }
};

inline ComparisonMatrix make_comparison_matrix(std::vector<std::string> algorithms,
                                               std::vector<double> accuracies, Matrix p_values,
                                               double alpha = 0.05) {
  ComparisonMatrix out;
  out.algorithms = std::move(algorithms);
  out.accuracies = std::move(accuracies);
  out.p_values = std::move(p_values);
  out.alpha = alpha;
  out.scores = rank_scores(out.accuracies, out.p_values, alpha);
  out.validate();
  return out;
}

inline nlohmann::json comparison_to_json(const ComparisonMatrix& cm) {
  cm.validate();
  nlohmann::json out;
  out["algorithms"] = cm.algorithms;
  out["accuracy"] = cm.accuracies;
  out["alpha"] = cm.alpha;
  out["scores"] = cm.scores;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(cm.count()));
  for (int i = 0; i < cm.count(); ++i) {
    rows[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(cm.count()));
    for (int j = 0; j < cm.count(); ++j) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = cm.p_values(i, j);
  }
  out["p_values"] = rows;
  return out;
}

// One line per algorithm: accuracy in percent, rank score in parentheses, and
// a star on every entry whose accuracy is not significantly different from
// the best one (the bold set in the usual table layout).
inline std::string comparison_to_text(const ComparisonMatrix& cm) {
  cm.validate();
  int best = 0;
  for (int i = 1; i < cm.count(); ++i)
    if (cm.accuracies[static_cast<std::size_t>(i)] > cm.accuracies[static_cast<std::size_t>(best)]) best = i;

  std::size_t width = std::string("algorithm").size();
  for (const auto& name : cm.algorithms) width = std::max(width, name.size());

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width) + 2) << "algorithm"
      << "accuracy (score)\n";
  for (int i = 0; i < cm.count(); ++i) {
    const bool starred = i == best || cm.p_values(i, best) >= cm.alpha;
    out << std::left << std::setw(static_cast<int>(width) + 2)
        << cm.algorithms[static_cast<std::size_t>(i)] << std::right << std::fixed
        << std::setprecision(2) << std::setw(6) << 100.0 * cm.accuracies[static_cast<std::size_t>(i)]
        << " (" << std::setprecision(1) << cm.scores[static_cast<std::size_t>(i)] << ")"
        << (starred ? " *" : "") << "\n";
  }
  out << "* no significant difference from the best accuracy (alpha = " << std::setprecision(2)
      << cm.alpha << ")\n";
  return out.str();
}

}  // namespace lnml
