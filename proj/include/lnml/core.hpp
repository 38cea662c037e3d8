#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lnml/errors.hpp"

namespace lnml {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

// Tolerances shared across the toolkit.
inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPsdEigTol = 1e-8;
inline constexpr double kDistanceClampTol = 1e-9;

// ---------------------------------------------------------------------------
// Dataset: instance matrix plus contiguous integer class labels in {1..c}.
// ---------------------------------------------------------------------------
struct Dataset {
  Matrix instances;                        // n x d
  IntVector labels;                        // length n, values in {1..c}
  std::vector<std::string> feature_names;  // optional; empty or length d

  int n() const { return static_cast<int>(instances.rows()); }
  int dim() const { return static_cast<int>(instances.cols()); }
  int num_classes() const { return labels.size() == 0 ? 0 : labels.maxCoeff(); }
};

inline void validate_dataset(const Dataset& data) {
  const int n = data.n();
  if (n < 2) throw ContractError("dataset: need at least 2 instances, got " + std::to_string(n));
  if (data.labels.size() != n)
    throw ContractError("dataset: label count " + std::to_string(data.labels.size()) +
                        " does not match instance count " + std::to_string(n));
  if (!data.instances.allFinite()) throw ContractError("dataset: non-finite feature value");
  if (!data.feature_names.empty() &&
      static_cast<int>(data.feature_names.size()) != data.dim())
    throw ContractError("dataset: feature_names length does not match dimension");
  const int c = data.labels.maxCoeff();
  if (data.labels.minCoeff() < 1)
    throw ContractError("dataset: labels must start at 1");
  std::vector<int> counts(static_cast<std::size_t>(c), 0);
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(data.labels[i] - 1)]++;
  for (int l = 0; l < c; ++l)
    if (counts[static_cast<std::size_t>(l)] == 0)
      throw ContractError("dataset: labels not contiguous, class " + std::to_string(l + 1) +
                          " is empty");
}

// Per-class instance counts, indexed by label-1.
inline std::vector<int> class_counts(const IntVector& labels) {
  std::vector<int> counts;
  for (int i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 1) throw ContractError("labels must be >= 1");
    if (y > static_cast<int>(counts.size())) counts.resize(static_cast<std::size_t>(y), 0);
    counts[static_cast<std::size_t>(y - 1)]++;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// MetricMatrix: symmetric PSD d x d matrix parametrizing the squared
// Mahalanobis distance. Squared distances throughout; no square roots.
// ---------------------------------------------------------------------------
struct MetricMatrix {
  Matrix entries;

  MetricMatrix() = default;
  explicit MetricMatrix(Matrix m) : entries(std::move(m)) {}

  int dim() const { return static_cast<int>(entries.rows()); }

  static MetricMatrix identity(int d) { return MetricMatrix(Matrix::Identity(d, d)); }
};

inline bool is_symmetric(const Matrix& m, double tol) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  return es.eigenvalues().minCoeff();
}

inline bool is_valid_metric(const MetricMatrix& metric) {
  const Matrix& m = metric.entries;
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  if (!is_symmetric(m, kSymmetryTol)) return false;
  return min_eigenvalue(m) >= -kPsdEigTol;
}

inline void require_valid_metric(const MetricMatrix& metric, const char* where) {
  if (!is_valid_metric(metric))
    throw ContractError(std::string(where) + ": metric matrix is not symmetric PSD");
}

// ---------------------------------------------------------------------------
// NeighborhoodBudget: (K_min, K_max, K_av) with K_max >= K_av >= K_min.
// ---------------------------------------------------------------------------
struct NeighborhoodBudget {
  int k_min = 0;
  int k_max = 1;
  int k_av = 1;

  NeighborhoodBudget() = default;
  NeighborhoodBudget(int kmin, int kmax, int kav) : k_min(kmin), k_max(kmax), k_av(kav) {
    if (k_min < 0) throw ContractError("budget: k_min must be >= 0");
    if (k_max < 1) throw ContractError("budget: k_max must be >= 1");
    if (k_av < 1) throw ContractError("budget: k_av must be >= 1");
    if (!(k_max >= k_av && k_av >= k_min))
      throw ContractError("budget: need k_max >= k_av >= k_min, got (" + std::to_string(k_min) +
                          ", " + std::to_string(k_max) + ", " + std::to_string(k_av) + ")");
  }

  bool uniform() const { return k_min == k_max; }
};

// ---------------------------------------------------------------------------
// NeighborhoodAssignment: binary relation P over ordered same-class pairs.
// Pairs are kept sorted for set semantics and fast membership tests.
// ---------------------------------------------------------------------------
struct NeighborhoodAssignment {
  std::vector<std::pair<int, int>> pairs;  // sorted ascending, unique
  IntVector per_instance_counts;           // length n

  int n() const { return static_cast<int>(per_instance_counts.size()); }
  std::size_t size() const { return pairs.size(); }

  bool contains(int i, int j) const {
    return std::binary_search(pairs.begin(), pairs.end(), std::make_pair(i, j));
  }

  static NeighborhoodAssignment from_pairs(int n, std::vector<std::pair<int, int>> raw) {
    std::sort(raw.begin(), raw.end());
    if (std::adjacent_find(raw.begin(), raw.end()) != raw.end())
      throw ContractError("assignment: duplicate pair");
    NeighborhoodAssignment out;
    out.per_instance_counts = IntVector::Zero(n);
    for (const auto& [i, j] : raw) {
      if (i < 0 || i >= n || j < 0 || j >= n)
        throw ContractError("assignment: pair index out of range");
      if (i == j) throw ContractError("assignment: diagonal pair");
      out.per_instance_counts[i]++;
    }
    out.pairs = std::move(raw);
    return out;
  }

  // Checks the label-dependent invariant (same-class pairs only).
  void validate(const IntVector& labels) const {
    if (labels.size() != per_instance_counts.size())
      throw ContractError("assignment: label vector size mismatch");
    IntVector counts = IntVector::Zero(n());
    for (const auto& [i, j] : pairs) {
      if (labels[i] != labels[j]) throw ContractError("assignment: cross-class pair");
      counts[i]++;
    }
    if (counts != per_instance_counts)
      throw ContractError("assignment: per_instance_counts out of sync");
  }
};

// Symmetric difference size; used for convergence and change traces.
inline int assignment_difference(const NeighborhoodAssignment& a,
                                 const NeighborhoodAssignment& b) {
  std::vector<std::pair<int, int>> diff;
  std::set_symmetric_difference(a.pairs.begin(), a.pairs.end(), b.pairs.begin(), b.pairs.end(),
                                std::back_inserter(diff));
  return static_cast<int>(diff.size());
}

// ---------------------------------------------------------------------------
// PairCostTable: for every instance i the candidates {j : y_j = y_i, j != i}
// with the LP objective coefficient F_ij.
// ---------------------------------------------------------------------------
struct PairCostTable {
  // rows[i] holds (candidate j, cost), candidates ascending in j.
  std::vector<std::vector<std::pair<int, double>>> rows;

  int n() const { return static_cast<int>(rows.size()); }

  std::size_t total_pairs() const {
    std::size_t total = 0;
    for (const auto& row : rows) total += row.size();
    return total;
  }

  // Candidate skeleton with zero costs, to be filled by a metric learner.
  static PairCostTable candidates_from_labels(const IntVector& labels) {
    const int n = static_cast<int>(labels.size());
    std::vector<std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) {
      const int y = labels[i];
      if (y > static_cast<int>(by_class.size())) by_class.resize(static_cast<std::size_t>(y));
      by_class[static_cast<std::size_t>(y - 1)].push_back(i);
    }
    PairCostTable table;
    table.rows.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto& mates = by_class[static_cast<std::size_t>(labels[i] - 1)];
      auto& row = table.rows[static_cast<std::size_t>(i)];
      row.reserve(mates.size() - 1);
      for (int j : mates)
        if (j != i) row.emplace_back(j, 0.0);
    }
    return table;
  }

  void validate_finite() const {
    for (const auto& row : rows)
      for (const auto& [j, cost] : row)
        if (!std::isfinite(cost)) throw ContractError("pair cost table: non-finite cost");
  }
};

// ---------------------------------------------------------------------------
// Elementary metric operations.
// ---------------------------------------------------------------------------
inline double mahalanobis_distance(const MetricMatrix& metric, const Eigen::Ref<const Vector>& a,
                                   const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size() || a.size() != metric.dim())
    throw ContractError("mahalanobis_distance: dimension mismatch");
  const Vector diff = a - b;
  double value = diff.dot(metric.entries * diff);
  if (value < 0.0 && value > -kDistanceClampTol) value = 0.0;
  return value;
}

// Nearest (Frobenius) PSD matrix: symmetrize, eigendecompose, clamp, rebuild.
inline MetricMatrix project_psd(const Matrix& s) {
  if (s.rows() != s.cols() || s.rows() == 0)
    throw ContractError("project_psd: matrix must be square and non-empty");
  if (!s.allFinite()) throw NumericError("project_psd: non-finite input");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ContractError("project_psd: input is not symmetric within tolerance");
  const Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("project_psd: eigendecomposition failed");
  const Vector clamped = es.eigenvalues().cwiseMax(0.0);
  Matrix rebuilt = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  rebuilt = 0.5 * (rebuilt + rebuilt.transpose());
  return MetricMatrix(std::move(rebuilt));
}

// All pairwise squared Mahalanobis distances via the Gram expansion
// d(i,j) = q_i + q_j - 2 g_ij with G = X M X^T, q = diag(G).
inline Matrix pairwise_squared_distances(const MetricMatrix& metric, const Matrix& instances) {
  if (instances.cols() != metric.dim())
    throw ContractError("pairwise_squared_distances: dimension mismatch");
  const Matrix g = instances * metric.entries * instances.transpose();
  const Vector q = g.diagonal();
  Matrix d = (-2.0 * g).rowwise() + q.transpose();
  d.colwise() += q;
  d = 0.5 * (d + d.transpose());  // exact symmetry for downstream tie-breaking
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

inline Matrix pairwise_squared_distances(const MetricMatrix& metric, const Dataset& data) {
  return pairwise_squared_distances(metric, data.instances);
}

namespace detail {

// Sum_{a,b} w_ab (x_a - x_b)(x_a - x_b)^T, assembled as X^T L X with the
// graph-Laplacian L = diag(row sums) + diag(col sums) - W - W^T. Diagonal
// weights cancel exactly, as they must (x_a - x_a = 0).
inline Matrix weighted_scatter(const Matrix& x, const Matrix& w) {
  Matrix l = -w - w.transpose();
  l.diagonal() += w.rowwise().sum() + w.colwise().sum().transpose();
  Matrix g = x.transpose() * l * x;
  return 0.5 * (g + g.transpose());
}

}  // namespace detail

}  // namespace lnml
