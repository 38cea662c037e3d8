#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "lnml/core.hpp"
#include "lnml/errors.hpp"
#include "lnml/version.hpp"

namespace lnml {

namespace detail {

inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t chunk = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kBase64Alphabet[(chunk >> 18) & 63]);
    out.push_back(kBase64Alphabet[(chunk >> 12) & 63]);
    out.push_back(kBase64Alphabet[(chunk >> 6) & 63]);
    out.push_back(kBase64Alphabet[chunk & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t chunk = bytes[i] << 16;
    out.push_back(kBase64Alphabet[(chunk >> 18) & 63]);
    out.push_back(kBase64Alphabet[(chunk >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t chunk = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kBase64Alphabet[(chunk >> 18) & 63]);
    out.push_back(kBase64Alphabet[(chunk >> 12) & 63]);
    out.push_back(kBase64Alphabet[(chunk >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw SchemaError("base64 payload length is not a multiple of 4");
  static const auto value_of = [] {
    std::array<int, 256> table;
    table.fill(-1);
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kBase64Alphabet[i])] = i;
    return table;
  }();

  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int values[4];
    int padding = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      if (ch == '=') {
        if (i + 4 != text.size() || k < 2) throw SchemaError("base64 padding in the wrong place");
        values[k] = 0;
        ++padding;
      } else {
        if (padding > 0) throw SchemaError("base64 character after padding");
        values[k] = value_of[static_cast<unsigned char>(ch)];
        if (values[k] < 0) throw SchemaError(std::string("invalid base64 character '") + ch + "'");
      }
    }
    const std::uint32_t chunk = (values[0] << 18) | (values[1] << 12) | (values[2] << 6) | values[3];
    out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
    if (padding < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
    if (padding < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
  }
  return out;
}

// Row-major IEEE-754 doubles, little-endian byte order regardless of host.
inline std::string encode_matrix_payload(const Matrix& m) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * 8);
  std::size_t offset = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::uint64_t bits = 0;
      const double value = m(r, c);
      std::memcpy(&bits, &value, sizeof(bits));
      for (int k = 0; k < 8; ++k) bytes[offset++] = static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff);
    }
  }
  return base64_encode(bytes);
}

inline Matrix decode_matrix_payload(const std::string& text, int rows, int cols) {
  const std::vector<std::uint8_t> bytes = base64_decode(text);
  const std::size_t expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8;
  if (bytes.size() != expected)
    throw SchemaError("matrix payload holds " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected));
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[offset++]) << (8 * k);
      double value = 0.0;
      std::memcpy(&value, &bits, sizeof(value));
      out(r, c) = value;
    }
  }
  return out;
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw SchemaError(std::string("model file: missing field '") + name + "'");
  return *it;
}

template <typename T>
T field_as(const nlohmann::json& j, const char* name) {
  try {
    return require_field(j, name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(std::string("model file: field '") + name + "' has the wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model files: everything cmd_train persists and cmd_inspect reads back.

struct ModelFile {
  std::string method;  // euclidean, lmnn, ln-lmnn, mcml, ln-mcml
  std::uint64_t seed = 0;
  MetricMatrix metric;
  bool has_assignment = false;
  NeighborhoodAssignment assignment;
  int k_min = 0, k_max = 0, k_av = 0;  // budget behind the assignment, if any
  std::vector<double> trace;           // objective trace from the fit
};

inline nlohmann::json model_to_json(const ModelFile& model) {
  if (model.metric.entries.rows() != model.metric.entries.cols())
    throw ContractError("model_to_json: metric matrix is not square");
  nlohmann::json out;
  out["schema_version"] = kModelSchemaVersion;
  out["toolkit_version"] = kVersion;
  out["method"] = model.method;
  out["seed"] = model.seed;
  out["metric"] = {{"rows", model.metric.entries.rows()},
                   {"cols", model.metric.entries.cols()},
                   {"data", detail::encode_matrix_payload(model.metric.entries)}};
  out["trace"] = model.trace;
  if (model.has_assignment) {
    std::vector<std::vector<int>> pairs;
    pairs.reserve(model.assignment.pairs.size());
    for (const auto& [i, j] : model.assignment.pairs) pairs.push_back({i, j});
    out["assignment"] = {{"n", model.assignment.n()}, {"pairs", pairs}};
    out["budget"] = {{"k_min", model.k_min}, {"k_max", model.k_max}, {"k_av", model.k_av}};
  }
  return out;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  const int version = detail::field_as<int>(j, "schema_version");
  if (version != kModelSchemaVersion)
    throw SchemaError("model file: schema version " + std::to_string(version) +
                      " is not supported, expected " + std::to_string(kModelSchemaVersion));

  ModelFile model;
  model.method = detail::field_as<std::string>(j, "method");
  model.seed = detail::field_as<std::uint64_t>(j, "seed");

  const nlohmann::json& metric = detail::require_field(j, "metric");
  const int rows = detail::field_as<int>(metric, "rows");
  const int cols = detail::field_as<int>(metric, "cols");
  if (rows < 1 || rows != cols)
    throw SchemaError("model file: metric must be square and non-empty");
  model.metric.entries =
      detail::decode_matrix_payload(detail::field_as<std::string>(metric, "data"), rows, cols);

  model.trace = detail::field_as<std::vector<double>>(j, "trace");

  if (j.contains("assignment")) {
    const nlohmann::json& assignment = detail::require_field(j, "assignment");
    const int n = detail::field_as<int>(assignment, "n");
    const auto raw = detail::field_as<std::vector<std::vector<int>>>(assignment, "pairs");
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(raw.size());
    for (const auto& entry : raw) {
      if (entry.size() != 2) throw SchemaError("model file: assignment pair is not a 2-tuple");
      pairs.emplace_back(entry[0], entry[1]);
    }
    try {
      model.assignment = NeighborhoodAssignment::from_pairs(n, std::move(pairs));
    } catch (const ContractError& e) {
      throw SchemaError(std::string("model file: invalid assignment: ") + e.what());
    }
    model.has_assignment = true;
    const nlohmann::json& budget = detail::require_field(j, "budget");
    model.k_min = detail::field_as<int>(budget, "k_min");
    model.k_max = detail::field_as<int>(budget, "k_max");
    model.k_av = detail::field_as<int>(budget, "k_av");
  }
  return model;
}

inline void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream out(path);
  if (!out) throw IoError("save_model: cannot open " + path + " for writing");
  out << model_to_json(model).dump(2) << '\n';
  if (!out) throw IoError("save_model: write to " + path + " failed");
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("load_model: " + path + " is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

// Inspection summary: eigenspectrum, per-instance target-count histogram, and
// the stored trace, as one JSON document.
inline nlohmann::json model_summary(const ModelFile& model) {
  nlohmann::json out;
  out["method"] = model.method;
  out["seed"] = model.seed;
  out["dim"] = model.metric.dim();

  Eigen::SelfAdjointEigenSolver<Matrix> solver(model.metric.entries);
  if (solver.info() != Eigen::Success)
    throw NumericError("model_summary: eigendecomposition failed");
  std::vector<double> eigenvalues(solver.eigenvalues().data(),
                                  solver.eigenvalues().data() + solver.eigenvalues().size());
  out["metric_eigenvalues"] = eigenvalues;  // ascending

  out["trace"] = model.trace;
  if (!model.trace.empty()) out["final_objective"] = model.trace.back();

  if (model.has_assignment) {
    std::map<int, int> histogram;
    for (int i = 0; i < model.assignment.n(); ++i) ++histogram[model.assignment.per_instance_counts[i]];
    nlohmann::json hist;
    double weighted = 0.0;
    for (const auto& [count, rows] : histogram) {
      hist[std::to_string(count)] = rows;
      weighted += static_cast<double>(count) * rows;
    }
    out["assignment_histogram"] = hist;
    out["assignment_pairs"] = model.assignment.size();
    out["mean_targets_per_instance"] = weighted / model.assignment.n();
    out["budget"] = {{"k_min", model.k_min}, {"k_max", model.k_max}, {"k_av", model.k_av}};
  }
  return out;
}

}  // namespace lnml
