#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lnml/core.hpp"
#include "lnml/detail/pgd.hpp"
#include "lnml/errors.hpp"

namespace lnml {

struct LmnnConfig {
  double mu = 0.5;  // trade-off between pull (distance) and push (hinge) terms
  int max_iters = 200;
  double step_size = 1e-3;
  double step_decay = 0.5;
  double tol = 1e-5;
  int impostor_refresh_every = 10;

  void validate() const {
    if (!(mu >= 0.0 && mu <= 1.0)) throw ContractError("lmnn: mu must be in [0, 1]");
    detail::PgdEngineConfig probe{max_iters, step_size, step_decay, tol,
                                  impostor_refresh_every, 1.0};
    probe.validate("lmnn");
  }
};

struct Triplet {
  int i = 0;
  int j = 0;  // target neighbor of i, same class
  int l = 0;  // impostor, different class
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// Margin-violating triplets: (i,j) in the assignment, y_l != y_i, and
// 1 + D(i,j) - D(i,l) > 0.
struct TripletSet {
  std::vector<Triplet> triplets;

  std::size_t size() const { return triplets.size(); }
};

struct LmnnLoss {
  double total = 0.0;
  PairCostTable per_pair;  // rows hold only the assignment's pairs
};

namespace detail {

inline void check_lmnn_inputs(const MetricMatrix& m, const Dataset& data, const char* where) {
  validate_dataset(data);
  require_valid_metric(m, where);
  if (m.dim() != data.dim())
    throw ContractError(std::string(where) + ": metric dimension does not match data");
}

inline void check_lmnn_assignment(const NeighborhoodAssignment& p, const Dataset& data,
                                  const char* where) {
  if (p.n() != data.n())
    throw ContractError(std::string(where) + ": assignment size does not match data");
  p.validate(data.labels);
}

inline void check_mu(double mu, const char* where) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ContractError(std::string(where) + ": mu must be in [0, 1]");
}

// Different-class distances per instance, ascending, with prefix sums and the
// impostor indices in the same order. Powers O(log n) hinge sums per pair.
struct ImpostorTable {
  std::vector<std::vector<double>> dist;
  std::vector<std::vector<int>> order;
  std::vector<std::vector<double>> prefix;  // prefix[i][c] = sum of dist[i][0..c)
};

inline ImpostorTable build_impostor_table(const Matrix& d, const IntVector& labels) {
  const int n = static_cast<int>(d.rows());
  ImpostorTable table;
  table.dist.resize(static_cast<std::size_t>(n));
  table.order.resize(static_cast<std::size_t>(n));
  table.prefix.resize(static_cast<std::size_t>(n));
  std::vector<std::pair<double, int>> row;
  for (int i = 0; i < n; ++i) {
    row.clear();
    for (int l = 0; l < n; ++l)
      if (labels[l] != labels[i]) row.emplace_back(d(i, l), l);
    std::sort(row.begin(), row.end());
    auto& dist = table.dist[static_cast<std::size_t>(i)];
    auto& order = table.order[static_cast<std::size_t>(i)];
    auto& prefix = table.prefix[static_cast<std::size_t>(i)];
    dist.resize(row.size());
    order.resize(row.size());
    prefix.assign(row.size() + 1, 0.0);
    for (std::size_t r = 0; r < row.size(); ++r) {
      dist[r] = row[r].first;
      order[r] = row[r].second;
      prefix[r + 1] = prefix[r] + row[r].first;
    }
  }
  return table;
}

// Number of impostors of i strictly inside the margin threshold.
inline std::ptrdiff_t violator_count(const ImpostorTable& table, int i, double threshold) {
  const auto& dist = table.dist[static_cast<std::size_t>(i)];
  return std::lower_bound(dist.begin(), dist.end(), threshold) - dist.begin();
}

// Sum over impostors l of max(0, threshold - D(i,l)).
inline double hinge_sum(const ImpostorTable& table, int i, double threshold) {
  const std::ptrdiff_t cnt = violator_count(table, i, threshold);
  return threshold * static_cast<double>(cnt) -
         table.prefix[static_cast<std::size_t>(i)][static_cast<std::size_t>(cnt)];
}

inline double lmnn_pair_cost_from(const Matrix& d, const ImpostorTable& table, int i, int j,
                                  double mu) {
  const double dij = d(i, j);
  return (1.0 - mu) * dij + mu * hinge_sum(table, i, 1.0 + dij);
}

inline TripletSet active_triplets_from(const Matrix& d, const ImpostorTable& table,
                                       const NeighborhoodAssignment& p) {
  TripletSet out;
  for (const auto& [i, j] : p.pairs) {
    const std::ptrdiff_t cnt = violator_count(table, i, 1.0 + d(i, j));
    const auto& order = table.order[static_cast<std::size_t>(i)];
    for (std::ptrdiff_t r = 0; r < cnt; ++r)
      out.triplets.push_back({i, j, order[static_cast<std::size_t>(r)]});
  }
  return out;
}

}  // namespace detail

inline TripletSet active_triplets(const MetricMatrix& m, const NeighborhoodAssignment& p,
                                  const Dataset& data) {
  detail::check_lmnn_inputs(m, data, "active_triplets");
  detail::check_lmnn_assignment(p, data, "active_triplets");
  const Matrix d = pairwise_squared_distances(m, data);
  return detail::active_triplets_from(d, detail::build_impostor_table(d, data.labels), p);
}

inline LmnnLoss lmnn_loss(const MetricMatrix& m, const NeighborhoodAssignment& p,
                          const Dataset& data, double mu) {
  detail::check_mu(mu, "lmnn_loss");
  detail::check_lmnn_inputs(m, data, "lmnn_loss");
  detail::check_lmnn_assignment(p, data, "lmnn_loss");
  const Matrix d = pairwise_squared_distances(m, data);
  const detail::ImpostorTable table = detail::build_impostor_table(d, data.labels);
  LmnnLoss out;
  out.per_pair.rows.resize(static_cast<std::size_t>(data.n()));
  for (const auto& [i, j] : p.pairs) {
    const double f = detail::lmnn_pair_cost_from(d, table, i, j, mu);
    out.per_pair.rows[static_cast<std::size_t>(i)].emplace_back(j, f);
    out.total += f;
  }
  return out;
}

inline Matrix lmnn_gradient(const MetricMatrix& m, const NeighborhoodAssignment& p,
                            const Dataset& data, double mu) {
  detail::check_mu(mu, "lmnn_gradient");
  detail::check_lmnn_inputs(m, data, "lmnn_gradient");
  detail::check_lmnn_assignment(p, data, "lmnn_gradient");
  const int n = data.n();
  const Matrix d = pairwise_squared_distances(m, data);
  const detail::ImpostorTable table = detail::build_impostor_table(d, data.labels);

  // Both activity counts compare the same float, 1 + D(i,j), against D(i,l),
  // so the pair-side and impostor-side tallies agree triplet for triplet.
  std::vector<std::vector<double>> thresholds(static_cast<std::size_t>(n));
  for (const auto& [i, j] : p.pairs)
    thresholds[static_cast<std::size_t>(i)].push_back(1.0 + d(i, j));
  for (auto& row : thresholds) std::sort(row.begin(), row.end());

  Matrix w = Matrix::Zero(n, n);
  for (const auto& [i, j] : p.pairs)
    w(i, j) += (1.0 - mu) + mu * static_cast<double>(detail::violator_count(table, i, 1.0 + d(i, j)));
  for (int i = 0; i < n; ++i) {
    const auto& row = thresholds[static_cast<std::size_t>(i)];
    if (row.empty()) continue;
    for (int l = 0; l < n; ++l) {
      if (data.labels[l] == data.labels[i]) continue;
      const auto active = row.end() - std::upper_bound(row.begin(), row.end(), d(i, l));
      if (active > 0) w(i, l) -= mu * static_cast<double>(active);
    }
  }
  return detail::weighted_scatter(data.instances, w);
}

inline PairCostTable lmnn_pair_costs(const MetricMatrix& m, const Dataset& data, double mu) {
  detail::check_mu(mu, "lmnn_pair_costs");
  detail::check_lmnn_inputs(m, data, "lmnn_pair_costs");
  const Matrix d = pairwise_squared_distances(m, data);
  const detail::ImpostorTable table = detail::build_impostor_table(d, data.labels);
  PairCostTable out = PairCostTable::candidates_from_labels(data.labels);
  for (int i = 0; i < data.n(); ++i)
    for (auto& [j, cost] : out.rows[static_cast<std::size_t>(i)])
      cost = detail::lmnn_pair_cost_from(d, table, i, j, mu);
  return out;
}

namespace detail {

// Engine adapter: the segment surrogate holds the triplet set fixed; refresh
// rescans all impostors. At a refresh point the surrogate equals the full
// loss, since exactly the positive-hinge triplets are retained.
class LmnnProblem {
 public:
  LmnnProblem(const Dataset& data, const NeighborhoodAssignment& p, double mu)
      : data_(data), p_(p), mu_(mu) {}

  double eval(const MetricMatrix& m) {
    d_ = pairwise_squared_distances(m, data_);
    double loss = 0.0;
    for (const auto& [i, j] : p_.pairs) loss += (1.0 - mu_) * d_(i, j);
    for (const auto& t : active_.triplets) {
      const double arg = 1.0 + d_(t.i, t.j) - d_(t.i, t.l);
      if (arg > 0.0) loss += mu_ * arg;
    }
    return loss;
  }

  Matrix gradient() const {
    Matrix w = Matrix::Zero(data_.n(), data_.n());
    for (const auto& [i, j] : p_.pairs) w(i, j) += 1.0 - mu_;
    for (const auto& t : active_.triplets) {
      if (1.0 + d_(t.i, t.j) - d_(t.i, t.l) > 0.0) {
        w(t.i, t.j) += mu_;
        w(t.i, t.l) -= mu_;
      }
    }
    return weighted_scatter(data_.instances, w);
  }

  double refresh(const MetricMatrix& m) {
    d_ = pairwise_squared_distances(m, data_);
    const ImpostorTable table = build_impostor_table(d_, data_.labels);
    active_ = active_triplets_from(d_, table, p_);
    double total = 0.0;
    for (const auto& [i, j] : p_.pairs) total += lmnn_pair_cost_from(d_, table, i, j, mu_);
    return total;
  }

 private:
  const Dataset& data_;
  const NeighborhoodAssignment& p_;
  double mu_;
  Matrix d_;           // distances at the last eval/refresh point
  TripletSet active_;  // frozen for the current segment
};

}  // namespace detail

inline FitResult lmnn_fit(const Dataset& data, const NeighborhoodAssignment& p,
                          const MetricMatrix& m0, const LmnnConfig& config) {
  config.validate();
  detail::check_lmnn_inputs(m0, data, "lmnn_fit");
  detail::check_lmnn_assignment(p, data, "lmnn_fit");
  if (p.size() == 0) throw ContractError("lmnn_fit: assignment has no pairs");

  detail::LmnnProblem problem(data, p, config.mu);
  detail::PgdEngineConfig engine{config.max_iters,
                                 config.step_size,
                                 config.step_decay,
                                 config.tol,
                                 config.impostor_refresh_every,
                                 1.0 / static_cast<double>(p.size())};
  return detail::projected_gradient(problem, m0, engine);
}

}  // namespace lnml
