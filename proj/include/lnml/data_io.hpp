#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "lnml/core.hpp"
#include "lnml/errors.hpp"

namespace lnml {

// ---------------------------------------------------------------------------
// CSV ingestion

struct LoadedCsv {
  Dataset data;
  std::vector<std::string> label_names;  // original token for label value l at [l - 1]
  int label_column = -1;                 // zero-based column index in the file
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    out.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& token, double& value) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  return ec == std::errc() && ptr == end && !token.empty();
}

inline bool parse_int(const std::string& token, int& value) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  return ec == std::errc() && ptr == end && !token.empty();
}

// Header names take precedence; a string of digits falls back to a zero-based
// column index, which is the only form accepted without a header.
inline int resolve_label_column(const std::string& label_column,
                                const std::vector<std::string>& header, int columns,
                                const std::string& path) {
  if (!header.empty()) {
    const auto hit = std::find(header.begin(), header.end(), label_column);
    if (hit != header.end()) return static_cast<int>(hit - header.begin());
  }
  int index = -1;
  if (parse_int(label_column, index)) {
    if (index < 0 || index >= columns)
      throw IoError("load_csv: label column index " + label_column + " out of range for " +
                    std::to_string(columns) + " columns in " + path);
    return index;
  }
  throw IoError("load_csv: label column '" + label_column + "' not found in " + path);
}

}  // namespace detail

// Plain numeric CSV with a single label column; labels are remapped to
// contiguous {1..c} in first-appearance order and the original tokens kept.
inline LoadedCsv load_csv(const std::string& path, const std::string& label_column,
                          bool has_header) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  const auto is_blank = [](const std::string& l) {
    return l.find_first_not_of(" \t\r") == std::string::npos;
  };
  while (!lines.empty() && is_blank(lines.back())) lines.pop_back();
  if (lines.empty()) throw IoError("load_csv: " + path + " is empty");

  std::vector<std::string> header;
  std::size_t first_row = 0;
  if (has_header) {
    header = detail::split_csv_line(lines[0]);
    first_row = 1;
  }
  if (first_row >= lines.size()) throw IoError("load_csv: " + path + " has no data rows");

  const int columns = static_cast<int>(detail::split_csv_line(lines[first_row]).size());
  if (has_header && static_cast<int>(header.size()) != columns)
    throw IoError("load_csv: header width does not match the data rows in " + path);
  if (columns < 2)
    throw IoError("load_csv: need at least one feature column and the label column in " + path);

  LoadedCsv out;
  out.label_column = detail::resolve_label_column(label_column, header, columns, path);

  const int n = static_cast<int>(lines.size() - first_row);
  const int d = columns - 1;
  out.data.instances.resize(n, d);
  out.data.labels.resize(n);
  if (has_header) {
    for (int col = 0; col < columns; ++col)
      if (col != out.label_column) out.data.feature_names.push_back(header[static_cast<std::size_t>(col)]);
  }

  std::map<std::string, int> label_ids;
  for (int row = 0; row < n; ++row) {
    const int line_no = static_cast<int>(first_row) + row + 1;  // 1-based, header included
    const std::vector<std::string> tokens = detail::split_csv_line(lines[first_row + static_cast<std::size_t>(row)]);
    if (static_cast<int>(tokens.size()) != columns)
      throw IoError("load_csv: line " + std::to_string(line_no) + " has " +
                    std::to_string(tokens.size()) + " fields, expected " + std::to_string(columns) +
                    " in " + path);
    int feature = 0;
    for (int col = 0; col < columns; ++col) {
      const std::string& token = tokens[static_cast<std::size_t>(col)];
      if (col == out.label_column) {
        const auto [it, inserted] = label_ids.try_emplace(token, static_cast<int>(out.label_names.size()) + 1);
        if (inserted) out.label_names.push_back(token);
        out.data.labels[row] = it->second;
        continue;
      }
      double value = 0.0;
      if (!detail::parse_double(token, value))
        throw IoError("load_csv: non-numeric value '" + token + "' at line " +
                      std::to_string(line_no) + ", column " + std::to_string(col + 1) + " in " + path);
      out.data.instances(row, feature++) = value;
    }
  }
  return out;
}

// Writes the dataset back out with the label as the last column. Features use
// 17 significant digits so a reload reproduces every double exactly.
inline void save_csv(const std::string& path, const Dataset& data,
                     const std::vector<std::string>& label_names = {},
                     const std::string& label_header = "label") {
  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot open " + path + " for writing");
  out.precision(17);

  if (!data.feature_names.empty() || !label_header.empty()) {
    for (int col = 0; col < data.dim(); ++col) {
      const std::string name = data.feature_names.empty()
                                   ? "f" + std::to_string(col)
                                   : data.feature_names[static_cast<std::size_t>(col)];
      out << name << ',';
    }
    out << label_header << '\n';
  }
  for (int row = 0; row < data.n(); ++row) {
    for (int col = 0; col < data.dim(); ++col) out << data.instances(row, col) << ',';
    const int label = data.labels[row];
    if (!label_names.empty()) {
      if (label < 1 || label > static_cast<int>(label_names.size()))
        throw ContractError("save_csv: label " + std::to_string(label) +
                            " has no entry in the label-name table");
      out << label_names[static_cast<std::size_t>(label - 1)] << '\n';
    } else {
      out << label << '\n';
    }
  }
  if (!out) throw IoError("save_csv: write to " + path + " failed");
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Vector mean;                      // length d
  Matrix components;                // r x d, rows orthonormal
  Vector explained_variance_ratio;  // length r, descending

  int dim() const { return static_cast<int>(mean.size()); }
  int rank() const { return static_cast<int>(components.rows()); }

  void validate() const {
    if (components.cols() != dim() || explained_variance_ratio.size() != rank())
      throw ContractError("PcaModel: field shapes disagree");
    if (rank() < 1 || rank() > dim()) throw ContractError("PcaModel: rank out of range");
    const Matrix gram = components * components.transpose();
    if ((gram - Matrix::Identity(rank(), rank())).cwiseAbs().maxCoeff() > 1e-8)
      throw ContractError("PcaModel: component rows are not orthonormal");
    double sum = 0.0;
    for (int i = 0; i < rank(); ++i) {
      const double ratio = explained_variance_ratio[i];
      if (ratio < 0.0) throw ContractError("PcaModel: negative explained variance ratio");
      if (i > 0 && ratio > explained_variance_ratio[i - 1] + 1e-12)
        throw ContractError("PcaModel: explained variance ratios not sorted");
      sum += ratio;
    }
    if (sum > 1.0 + 1e-10) throw ContractError("PcaModel: explained variance ratios sum past 1");
  }
};

struct PcaRetain {
  enum class Mode { kCount, kFraction };
  Mode mode = Mode::kCount;
  int count = 0;
  double fraction = 0.0;

  static PcaRetain by_count(int r) {
    PcaRetain out;
    out.mode = Mode::kCount;
    out.count = r;
    return out;
  }
  static PcaRetain by_fraction(double v) {
    PcaRetain out;
    out.mode = Mode::kFraction;
    out.fraction = v;
    return out;
  }
};

inline PcaModel pca_fit(const Matrix& instances, PcaRetain retain) {
  const int n = static_cast<int>(instances.rows());
  const int d = static_cast<int>(instances.cols());
  if (n < 2) throw ContractError("pca_fit: need at least 2 instances, got " + std::to_string(n));
  if (!instances.allFinite()) throw ContractError("pca_fit: non-finite feature value");
  if (retain.mode == PcaRetain::Mode::kCount && (retain.count < 1 || retain.count > d))
    throw ContractError("pca_fit: component count must lie in [1, " + std::to_string(d) + "]");
  if (retain.mode == PcaRetain::Mode::kFraction &&
      !(retain.fraction > 0.0 && retain.fraction <= 1.0))
    throw ContractError("pca_fit: variance fraction must lie in (0, 1]");

  PcaModel model;
  model.mean = instances.colwise().mean().transpose();
  const Matrix centered = instances.rowwise() - model.mean.transpose();
  const Matrix covariance = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> solver(covariance);
  if (solver.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");
  // Ascending from the solver; read from the back for the leading components.
  Vector eigenvalues(d);
  for (int i = 0; i < d; ++i) eigenvalues[i] = std::max(0.0, solver.eigenvalues()[d - 1 - i]);
  const double total = eigenvalues.sum();
  if (total <= 0.0) throw NumericError("pca_fit: zero covariance, all points are identical");

  int r = 0;
  if (retain.mode == PcaRetain::Mode::kCount) {
    r = retain.count;
  } else {
    double cumulative = 0.0;
    for (r = 1; r <= d; ++r) {
      cumulative += eigenvalues[r - 1] / total;
      if (cumulative >= retain.fraction) break;
    }
    r = std::min(r, d);  // rounding can leave the cumulative just shy of 1
  }

  model.components.resize(r, d);
  model.explained_variance_ratio.resize(r);
  for (int i = 0; i < r; ++i) {
    Vector component = solver.eigenvectors().col(d - 1 - i);
    // Deterministic sign: the entry with the largest magnitude is positive.
    int pivot = 0;
    component.cwiseAbs().maxCoeff(&pivot);
    if (component[pivot] < 0.0) component = -component;
    model.components.row(i) = component.transpose();
    model.explained_variance_ratio[i] = eigenvalues[i] / total;
  }
  model.validate();
  return model;
}

inline PcaModel pca_fit(const Dataset& data, PcaRetain retain) {
  return pca_fit(data.instances, retain);
}

inline Matrix pca_transform(const PcaModel& model, const Matrix& instances) {
  if (instances.cols() != model.dim())
    throw ContractError("pca_transform: instance dimension does not match the model");
  return (instances.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Dataset pca_transform(const PcaModel& model, const Dataset& data) {
  Dataset out;
  out.instances = pca_transform(model, data.instances);
  out.labels = data.labels;
  return out;
}

// Back-projection into the original space; composing with pca_transform is
// the identity on the retained subspace.
inline Matrix pca_reconstruct(const PcaModel& model, const Matrix& projected) {
  if (projected.cols() != model.rank())
    throw ContractError("pca_reconstruct: input width does not match the model rank");
  return (projected * model.components).rowwise() + model.mean.transpose();
}

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  Vector mean;                 // length d
  Vector stddev;               // length d, exactly 1.0 for constant features
  std::vector<bool> constant;  // per-feature flag

  int dim() const { return static_cast<int>(mean.size()); }
};

// Sample standard deviations (divisor n - 1). Constant features keep a unit
// divisor so they pass through centered.
inline Standardizer standardize_fit(const Matrix& instances) {
  const int n = static_cast<int>(instances.rows());
  const int d = static_cast<int>(instances.cols());
  if (n < 2) throw ContractError("standardize_fit: need at least 2 instances");
  if (!instances.allFinite()) throw ContractError("standardize_fit: non-finite feature value");

  Standardizer out;
  out.mean = instances.colwise().mean().transpose();
  out.stddev.resize(d);
  out.constant.assign(static_cast<std::size_t>(d), false);
  const Matrix centered = instances.rowwise() - out.mean.transpose();
  for (int col = 0; col < d; ++col) {
    const double sd = std::sqrt(centered.col(col).squaredNorm() / static_cast<double>(n - 1));
    if (sd <= 1e-12 * std::max(1.0, std::abs(out.mean[col]))) {
      out.constant[static_cast<std::size_t>(col)] = true;
      out.stddev[col] = 1.0;
    } else {
      out.stddev[col] = sd;
    }
  }
  return out;
}

inline Standardizer standardize_fit(const Dataset& data) { return standardize_fit(data.instances); }

inline Matrix standardize_apply(const Standardizer& model, const Matrix& instances) {
  if (instances.cols() != model.dim())
    throw ContractError("standardize_apply: instance dimension does not match the model");
  Matrix out = instances.rowwise() - model.mean.transpose();
  out.array().rowwise() /= model.stddev.transpose().array();
  return out;
}

inline Dataset standardize_apply(const Standardizer& model, const Dataset& data) {
  Dataset out;
  out.instances = standardize_apply(model, data.instances);
  out.labels = data.labels;
  out.feature_names = data.feature_names;
  return out;
}

}  // namespace lnml
