#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lnml/core.hpp"
#include "lnml/detail/pgd.hpp"
#include "lnml/errors.hpp"

namespace lnml {

struct McmlConfig {
  int max_iters = 200;
  double step_size = 1e-3;
  double step_decay = 0.5;
  double tol = 1e-5;

  void validate() const {
    detail::PgdEngineConfig probe{max_iters, step_size, step_decay, tol, 1, 1.0};
    probe.validate("mcml");
  }
};

// Row i is the selection distribution p_M(.|i); log_z holds its normalizer.
struct SelectionProbabilities {
  Matrix p;
  Vector log_z;
};

namespace detail {

inline SelectionProbabilities selection_from_distances(const Matrix& d) {
  Matrix s = -d;
  s.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  const Vector shift = s.rowwise().maxCoeff();
  Matrix ex = (s.colwise() - shift).array().exp().matrix();
  ex.diagonal().setZero();
  const Vector z = ex.rowwise().sum();
  SelectionProbabilities out;
  out.p = (ex.array().colwise() / z.array()).matrix();
  out.log_z = shift.array() + z.array().log();
  return out;
}

inline void check_mcml_inputs(const MetricMatrix& m, const Dataset& data, const char* where) {
  if (data.n() < 2)
    throw ContractError(std::string(where) +
                        ": selection distribution is undefined for a single instance");
  validate_dataset(data);
  require_valid_metric(m, where);
  if (m.dim() != data.dim())
    throw ContractError(std::string(where) + ": metric dimension does not match data");
}

inline void check_uniform_assignment(const NeighborhoodAssignment& p, const Dataset& data,
                                     int k_av, const char* where) {
  if (k_av < 1) throw ContractError(std::string(where) + ": k_av must be >= 1");
  if (p.n() != data.n())
    throw ContractError(std::string(where) + ": assignment size does not match data");
  p.validate(data.labels);
  for (int i = 0; i < p.n(); ++i)
    if (p.per_instance_counts[i] != k_av)
      throw ContractError(std::string(where) + ": instance " + std::to_string(i) + " has " +
                          std::to_string(p.per_instance_counts[i]) + " neighbors, expected " +
                          std::to_string(k_av));
}

// Loss and gradient with a per-row normalizer, shared by the uniform-K_av
// objective (divisor k_av everywhere) and the global baseline (divisor =
// row candidate count). Rows with divisor 0 must carry no pairs.
inline double mcml_loss_rows(const Matrix& d, const Vector& log_z,
                             const NeighborhoodAssignment& p, const Vector& divisor) {
  double loss = 0.0;
  for (const auto& [i, j] : p.pairs) loss += (d(i, j) + log_z(i)) / divisor(i);
  return loss;
}

inline Matrix mcml_gradient_rows(const Matrix& x, const Matrix& probs,
                                 const NeighborhoodAssignment& p, const Vector& divisor) {
  const int n = static_cast<int>(probs.rows());
  Vector row_scale = Vector::Zero(n);
  for (int i = 0; i < n; ++i)
    if (p.per_instance_counts[i] > 0)
      row_scale(i) = static_cast<double>(p.per_instance_counts[i]) / divisor(i);
  Matrix w = (-(probs.array().colwise() * row_scale.array())).matrix();
  for (const auto& [i, j] : p.pairs) w(i, j) += 1.0 / divisor(i);
  return weighted_scatter(x, w);
}

}  // namespace detail

inline SelectionProbabilities selection_probabilities(const MetricMatrix& m, const Dataset& data) {
  detail::check_mcml_inputs(m, data, "selection_probabilities");
  return detail::selection_from_distances(pairwise_squared_distances(m, data));
}

inline double mcml_loss(const MetricMatrix& m, const NeighborhoodAssignment& p,
                        const Dataset& data, int k_av) {
  detail::check_mcml_inputs(m, data, "mcml_loss");
  detail::check_uniform_assignment(p, data, k_av, "mcml_loss");
  const Matrix d = pairwise_squared_distances(m, data);
  const SelectionProbabilities sp = detail::selection_from_distances(d);
  return detail::mcml_loss_rows(d, sp.log_z, p,
                                Vector::Constant(data.n(), static_cast<double>(k_av)));
}

inline Matrix mcml_gradient(const MetricMatrix& m, const NeighborhoodAssignment& p,
                            const Dataset& data, int k_av) {
  detail::check_mcml_inputs(m, data, "mcml_gradient");
  detail::check_uniform_assignment(p, data, k_av, "mcml_gradient");
  const Matrix d = pairwise_squared_distances(m, data);
  const SelectionProbabilities sp = detail::selection_from_distances(d);
  return detail::mcml_gradient_rows(data.instances, sp.p, p,
                                    Vector::Constant(data.n(), static_cast<double>(k_av)));
}

inline PairCostTable mcml_pair_costs(const MetricMatrix& m, const Dataset& data, int k_av) {
  if (k_av < 1) throw ContractError("mcml_pair_costs: k_av must be >= 1");
  detail::check_mcml_inputs(m, data, "mcml_pair_costs");
  const Matrix d = pairwise_squared_distances(m, data);
  const SelectionProbabilities sp = detail::selection_from_distances(d);
  PairCostTable out = PairCostTable::candidates_from_labels(data.labels);
  for (int i = 0; i < data.n(); ++i)
    for (auto& [j, cost] : out.rows[static_cast<std::size_t>(i)])
      cost = (d(i, j) + sp.log_z(i)) / static_cast<double>(k_av);
  return out;
}

namespace detail {

// Engine adapter. The objective is smooth, so the surrogate IS the full loss
// and refresh only spares the recompute when asked about the point it just
// evaluated (the common accepted-step path with refresh_every = 1).
class McmlProblem {
 public:
  McmlProblem(const Dataset& data, const NeighborhoodAssignment& p, Vector divisor)
      : data_(data), p_(p), divisor_(std::move(divisor)) {}

  double eval(const MetricMatrix& m) {
    d_ = pairwise_squared_distances(m, data_);
    probs_ = selection_from_distances(d_);
    last_point_ = m.entries;
    last_loss_ = mcml_loss_rows(d_, probs_.log_z, p_, divisor_);
    return last_loss_;
  }

  Matrix gradient() const { return mcml_gradient_rows(data_.instances, probs_.p, p_, divisor_); }

  double refresh(const MetricMatrix& m) {
    if (last_point_.rows() == m.entries.rows() && (last_point_ - m.entries).isZero(0.0))
      return last_loss_;
    return eval(m);
  }

 private:
  const Dataset& data_;
  const NeighborhoodAssignment& p_;
  Vector divisor_;
  Matrix d_;
  SelectionProbabilities probs_;
  Matrix last_point_;
  double last_loss_ = 0.0;
};

inline FitResult mcml_fit_rows(const Dataset& data, const NeighborhoodAssignment& p,
                               const MetricMatrix& m0, const McmlConfig& config,
                               Vector divisor) {
  if (p.size() == 0) throw ContractError("mcml_fit: assignment has no pairs");
  McmlProblem problem(data, p, std::move(divisor));
  PgdEngineConfig engine{config.max_iters, config.step_size, config.step_decay, config.tol, 1,
                         1.0 / static_cast<double>(p.size())};
  return projected_gradient(problem, m0, engine);
}

}  // namespace detail

// Uniform-neighborhood MCML; K_av is implied by the assignment's row counts.
inline FitResult mcml_fit(const Dataset& data, const NeighborhoodAssignment& p,
                          const MetricMatrix& m0, const McmlConfig& config) {
  config.validate();
  detail::check_mcml_inputs(m0, data, "mcml_fit");
  if (p.n() != data.n()) throw ContractError("mcml_fit: assignment size does not match data");
  if (p.size() == 0) throw ContractError("mcml_fit: assignment has no pairs");
  const int k_av = p.per_instance_counts[0];
  detail::check_uniform_assignment(p, data, k_av, "mcml_fit");
  return detail::mcml_fit_rows(data, p, m0, config,
                               Vector::Constant(data.n(), static_cast<double>(k_av)));
}

// Global-neighborhood baseline: every same-class pair is a neighbor and each
// row is normalized by its own candidate count.
inline FitResult mcml_fit_global(const Dataset& data, const MetricMatrix& m0,
                                 const McmlConfig& config) {
  config.validate();
  detail::check_mcml_inputs(m0, data, "mcml_fit_global");
  const PairCostTable skeleton = PairCostTable::candidates_from_labels(data.labels);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(skeleton.total_pairs());
  Vector divisor = Vector::Ones(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const auto& row = skeleton.rows[static_cast<std::size_t>(i)];
    if (!row.empty()) divisor(i) = static_cast<double>(row.size());
    for (const auto& [j, cost] : row) pairs.emplace_back(i, j);
  }
  const NeighborhoodAssignment p = NeighborhoodAssignment::from_pairs(data.n(), std::move(pairs));
  return detail::mcml_fit_rows(data, p, m0, config, std::move(divisor));
}

}  // namespace lnml
