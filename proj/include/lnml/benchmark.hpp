#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lnml/core.hpp"
#include "lnml/data_io.hpp"
#include "lnml/detail/common.hpp"
#include "lnml/driver.hpp"
#include "lnml/errors.hpp"
#include "lnml/eval.hpp"
#include "lnml/lmnn.hpp"
#include "lnml/mcml.hpp"
#include "lnml/model_io.hpp"
#include "lnml/neighborhood.hpp"
#include "lnml/version.hpp"

namespace lnml {

// ---------------------------------------------------------------------------
// Logging: stderr, level from LNML_LOG (debug|info|warn|error|silent).

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kSilent = 4 };

namespace detail {

inline std::atomic<int>& log_threshold() {
  static std::atomic<int> level = [] {
    const char* env = std::getenv("LNML_LOG");
    std::string value = env ? env : "info";
    std::transform(value.begin(), value.end(), value.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (value == "debug") return static_cast<int>(LogLevel::kDebug);
    if (value == "warn" || value == "warning") return static_cast<int>(LogLevel::kWarn);
    if (value == "error") return static_cast<int>(LogLevel::kError);
    if (value == "silent" || value == "off") return static_cast<int>(LogLevel::kSilent);
    return static_cast<int>(LogLevel::kInfo);
  }();
  return level;
}

inline void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) < log_threshold().load()) return;
  static std::mutex gate;
  const std::lock_guard<std::mutex> lock(gate);
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::cerr << "[lnml " << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_threshold().store(static_cast<int>(level)); }

// ---------------------------------------------------------------------------
// Experiment configuration

enum class MethodKind { kEuclidean, kLmnn, kLnLmnn, kMcml, kLnMcml };

inline const char* method_kind_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::kEuclidean: return "euclidean";
    case MethodKind::kLmnn: return "lmnn";
    case MethodKind::kLnLmnn: return "ln-lmnn";
    case MethodKind::kMcml: return "mcml";
    case MethodKind::kLnMcml: return "ln-mcml";
  }
  return "?";
}

inline MethodKind parse_method_kind(const std::string& text, const std::string& where) {
  if (text == "euclidean") return MethodKind::kEuclidean;
  if (text == "lmnn") return MethodKind::kLmnn;
  if (text == "ln-lmnn") return MethodKind::kLnLmnn;
  if (text == "mcml") return MethodKind::kMcml;
  if (text == "ln-mcml") return MethodKind::kLnMcml;
  throw ContractError(where + ": unknown method '" + text +
                      "' (expected euclidean, lmnn, ln-lmnn, mcml, or ln-mcml)");
}

// "N" retains a fixed component count, "var:F" a variance fraction.
inline PcaRetain parse_pca_retain(const std::string& text, const std::string& where) {
  if (text.rfind("var:", 0) == 0) {
    double fraction = 0.0;
    if (!detail::parse_double(text.substr(4), fraction))
      throw ContractError(where + ": cannot parse variance fraction in '" + text + "'");
    return PcaRetain::by_fraction(fraction);
  }
  int count = 0;
  if (detail::parse_int(text, count)) return PcaRetain::by_count(count);
  throw ContractError(where + ": expected a component count or 'var:<fraction>', got '" + text + "'");
}

struct BudgetGrid {
  std::vector<int> k_min_values;  // ln-lmnn: crossed with k_max_values, k_av fixed
  std::vector<int> k_max_values;
  std::vector<int> k_av_values;   // ln-mcml: uniform budgets (k, k, k)
  int inner_folds = 2;
  // Optional smaller optimizer budgets while scoring grid points (0 = same
  // as the final fit); selection only needs a ranking.
  int max_outer_iters = 0;
  int max_iters = 0;

  bool enabled() const {
    return !k_min_values.empty() || !k_max_values.empty() || !k_av_values.empty();
  }
};

struct MethodSpec {
  std::string name;  // unique within a config; defaults to the kind name
  MethodKind kind = MethodKind::kEuclidean;
  int knn_k = 1;
  int k_min = 3, k_max = 3, k_av = 3;  // ln-* budget; plain lmnn takes k_av targets
  LmnnConfig lmnn;
  McmlConfig mcml;
  int max_outer_iters = 20;
  double outer_tol = 1e-6;
  BudgetGrid grid;

  void validate(const std::string& where) const {
    if (name.empty()) throw ContractError(where + ".name: must not be empty");
    if (knn_k < 1) throw ContractError(where + ".knn_k: must be >= 1");
    const bool is_ln = kind == MethodKind::kLnLmnn || kind == MethodKind::kLnMcml;
    if (grid.enabled() && !is_ln)
      throw ContractError(where + ".grid: only ln-lmnn and ln-mcml support grid selection");
    if (grid.enabled()) {
      if (kind == MethodKind::kLnLmnn &&
          (grid.k_min_values.empty() || grid.k_max_values.empty() || !grid.k_av_values.empty()))
        throw ContractError(where + ".grid: ln-lmnn needs k_min and k_max candidate sets");
      if (kind == MethodKind::kLnMcml &&
          (grid.k_av_values.empty() || !grid.k_min_values.empty() || !grid.k_max_values.empty()))
        throw ContractError(where + ".grid: ln-mcml needs a k_av candidate set");
      if (grid.inner_folds < 2) throw ContractError(where + ".grid.inner_folds: must be >= 2");
      if (grid.max_outer_iters < 0 || grid.max_iters < 0)
        throw ContractError(where + ".grid: optimizer budgets must be >= 0");
    }
    if (kind == MethodKind::kLmnn || kind == MethodKind::kLnLmnn) lmnn.validate();
    if (kind == MethodKind::kMcml || kind == MethodKind::kLnMcml) mcml.validate();
    if (is_ln && !grid.enabled()) {
      const NeighborhoodBudget checked(k_min, k_max, k_av);
      (void)checked;
      if (kind == MethodKind::kLnMcml && (k_min != k_av || k_max != k_av))
        throw ContractError(where + ": ln-mcml needs a uniform budget (k_min = k_max = k_av)");
    }
    if (kind == MethodKind::kLmnn && k_av < 1)
      throw ContractError(where + ".k_av: lmnn needs at least one target neighbor");
    if (max_outer_iters < 1) throw ContractError(where + ".max_outer_iters: must be >= 1");
    if (!(outer_tol > 0.0)) throw ContractError(where + ".outer_tol: must be positive");
  }
};

struct PreprocessSpec {
  bool standardize = false;
  bool use_pca = false;
  PcaRetain pca;
};

struct ExperimentConfig {
  std::string dataset_path;
  std::string label_column = "label";
  bool has_header = true;
  PreprocessSpec preprocess;
  std::vector<MethodSpec> methods;
  int folds = 10;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_json;   // benchmark: report JSON path
  std::string out_text;   // benchmark: text table path
  std::string out_model;  // train: model file path

  void validate() const {
    if (dataset_path.empty()) throw ContractError("config.dataset: must not be empty");
    if (!std::ifstream(dataset_path).good())
      throw IoError("config.dataset: cannot read '" + dataset_path + "'");
    if (methods.empty()) throw ContractError("config.methods: need at least one method");
    if (folds < 2) throw ContractError("config.folds: must be >= 2");
    if (workers < 1) throw ContractError("config.workers: must be >= 1");
    std::vector<std::string> names;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const std::string where = "config.methods[" + std::to_string(m) + "]";
      methods[m].validate(where);
      if (std::find(names.begin(), names.end(), methods[m].name) != names.end())
        throw ContractError(where + ".name: duplicate method name '" + methods[m].name +
                            "'; set distinct names");
      names.push_back(methods[m].name);
    }
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

template <typename T>
T cfg_get(const nlohmann::json& j, const std::string& path, const char* key, const T& fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractError("config: " + path + key + ": wrong type");
  }
}

template <typename T>
T cfg_require(const nlohmann::json& j, const std::string& path, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null())
    throw ContractError("config: " + path + key + ": missing required field");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractError("config: " + path + key + ": wrong type");
  }
}

inline MethodSpec method_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ContractError("config: " + path + ": must be an object");
  MethodSpec spec;
  spec.kind = parse_method_kind(cfg_require<std::string>(j, path + ".", "kind"), "config: " + path + ".kind");
  spec.name = cfg_get<std::string>(j, path + ".", "name", method_kind_name(spec.kind));
  spec.knn_k = cfg_get<int>(j, path + ".", "knn_k", 1);

  spec.k_av = cfg_get<int>(j, path + ".", "k", spec.k_av);  // plain-lmnn target count
  spec.k_min = cfg_get<int>(j, path + ".", "k_min", spec.k_min);
  spec.k_max = cfg_get<int>(j, path + ".", "k_max", spec.k_max);
  spec.k_av = cfg_get<int>(j, path + ".", "k_av", spec.k_av);

  spec.lmnn.mu = cfg_get<double>(j, path + ".", "mu", spec.lmnn.mu);
  spec.lmnn.max_iters = cfg_get<int>(j, path + ".", "max_iters", spec.lmnn.max_iters);
  spec.lmnn.step_size = cfg_get<double>(j, path + ".", "step_size", spec.lmnn.step_size);
  spec.lmnn.step_decay = cfg_get<double>(j, path + ".", "step_decay", spec.lmnn.step_decay);
  spec.lmnn.tol = cfg_get<double>(j, path + ".", "tol", spec.lmnn.tol);
  spec.lmnn.impostor_refresh_every =
      cfg_get<int>(j, path + ".", "impostor_refresh_every", spec.lmnn.impostor_refresh_every);
  spec.mcml.max_iters = cfg_get<int>(j, path + ".", "max_iters", spec.mcml.max_iters);
  spec.mcml.step_size = cfg_get<double>(j, path + ".", "step_size", spec.mcml.step_size);
  spec.mcml.step_decay = cfg_get<double>(j, path + ".", "step_decay", spec.mcml.step_decay);
  spec.mcml.tol = cfg_get<double>(j, path + ".", "tol", spec.mcml.tol);

  spec.max_outer_iters = cfg_get<int>(j, path + ".", "max_outer_iters", spec.max_outer_iters);
  spec.outer_tol = cfg_get<double>(j, path + ".", "outer_tol", spec.outer_tol);

  if (j.contains("grid") && !j["grid"].is_null()) {
    const nlohmann::json& g = j["grid"];
    const std::string gpath = path + ".grid.";
    spec.grid.k_min_values = cfg_get<std::vector<int>>(g, gpath, "k_min", {});
    spec.grid.k_max_values = cfg_get<std::vector<int>>(g, gpath, "k_max", {});
    spec.grid.k_av_values = cfg_get<std::vector<int>>(g, gpath, "k_av", {});
    spec.grid.inner_folds = cfg_get<int>(g, gpath, "inner_folds", spec.grid.inner_folds);
    spec.grid.max_outer_iters = cfg_get<int>(g, gpath, "max_outer_iters", 0);
    spec.grid.max_iters = cfg_get<int>(g, gpath, "max_iters", 0);
  }
  return spec;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("config: top level must be an object");
  ExperimentConfig config;
  config.dataset_path = detail::cfg_require<std::string>(j, "", "dataset");
  config.label_column = detail::cfg_get<std::string>(j, "", "label_column", config.label_column);
  config.has_header = detail::cfg_get<bool>(j, "", "has_header", config.has_header);
  config.folds = detail::cfg_get<int>(j, "", "folds", config.folds);
  config.seed = detail::cfg_get<std::uint64_t>(j, "", "seed", config.seed);
  config.workers = detail::cfg_get<int>(j, "", "workers", config.workers);
  config.preprocess.standardize = detail::cfg_get<bool>(j, "", "standardize", false);
  if (j.contains("pca") && !j["pca"].is_null()) {
    config.preprocess.use_pca = true;
    if (j["pca"].is_number_integer())
      config.preprocess.pca = PcaRetain::by_count(j["pca"].get<int>());
    else if (j["pca"].is_string())
      config.preprocess.pca = parse_pca_retain(j["pca"].get<std::string>(), "config: pca");
    else
      throw ContractError("config: pca: expected an integer count or 'var:<fraction>' string");
  }
  const auto methods = detail::cfg_require<std::vector<nlohmann::json>>(j, "", "methods");
  for (std::size_t m = 0; m < methods.size(); ++m)
    config.methods.push_back(
        detail::method_from_json(methods[m], "methods[" + std::to_string(m) + "]"));
  if (j.contains("out") && !j["out"].is_null()) {
    const nlohmann::json& out = j["out"];
    config.out_json = detail::cfg_get<std::string>(out, "out.", "json", "");
    config.out_text = detail::cfg_get<std::string>(out, "out.", "text", "");
    config.out_model = detail::cfg_get<std::string>(out, "out.", "model", "");
  }
  return config;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config: " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json method_to_json(const MethodSpec& spec) {
  nlohmann::json out;
  out["name"] = spec.name;
  out["kind"] = method_kind_name(spec.kind);
  out["knn_k"] = spec.knn_k;
  switch (spec.kind) {
    case MethodKind::kEuclidean:
      break;
    case MethodKind::kLmnn:
      out["k"] = spec.k_av;
      break;
    default:
      if (!spec.grid.enabled()) {
        out["k_min"] = spec.k_min;
        out["k_max"] = spec.k_max;
        out["k_av"] = spec.k_av;
      }
      out["max_outer_iters"] = spec.max_outer_iters;
      out["outer_tol"] = spec.outer_tol;
      break;
  }
  if (spec.kind == MethodKind::kLmnn || spec.kind == MethodKind::kLnLmnn) {
    out["mu"] = spec.lmnn.mu;
    out["max_iters"] = spec.lmnn.max_iters;
    out["step_size"] = spec.lmnn.step_size;
    out["step_decay"] = spec.lmnn.step_decay;
    out["tol"] = spec.lmnn.tol;
    out["impostor_refresh_every"] = spec.lmnn.impostor_refresh_every;
  }
  if (spec.kind == MethodKind::kMcml || spec.kind == MethodKind::kLnMcml) {
    out["max_iters"] = spec.mcml.max_iters;
    out["step_size"] = spec.mcml.step_size;
    out["step_decay"] = spec.mcml.step_decay;
    out["tol"] = spec.mcml.tol;
  }
  if (spec.grid.enabled()) {
    nlohmann::json g;
    if (spec.kind == MethodKind::kLnLmnn) {
      g["k_min"] = spec.grid.k_min_values;
      g["k_max"] = spec.grid.k_max_values;
      out["k_av"] = spec.k_av;
    } else {
      g["k_av"] = spec.grid.k_av_values;
    }
    g["inner_folds"] = spec.grid.inner_folds;
    if (spec.grid.max_outer_iters > 0) g["max_outer_iters"] = spec.grid.max_outer_iters;
    if (spec.grid.max_iters > 0) g["max_iters"] = spec.grid.max_iters;
    out["grid"] = g;
  }
  return out;
}

inline nlohmann::json config_to_json(const ExperimentConfig& config) {
  nlohmann::json out;
  out["dataset"] = config.dataset_path;
  out["label_column"] = config.label_column;
  out["has_header"] = config.has_header;
  out["standardize"] = config.preprocess.standardize;
  if (config.preprocess.use_pca) {
    if (config.preprocess.pca.mode == PcaRetain::Mode::kCount)
      out["pca"] = config.preprocess.pca.count;
    else
      out["pca"] = "var:" + std::to_string(config.preprocess.pca.fraction);
  } else {
    out["pca"] = nullptr;
  }
  out["folds"] = config.folds;
  out["seed"] = config.seed;
  out["workers"] = config.workers;
  nlohmann::json methods = nlohmann::json::array();
  for (const MethodSpec& spec : config.methods) methods.push_back(method_to_json(spec));
  out["methods"] = methods;
  return out;
}

// ---------------------------------------------------------------------------
// Fitting one method on one training set

// The classic fixed target neighborhood: the k nearest same-class points
// under the Euclidean metric, ties broken by index like the exact solver.
inline NeighborhoodAssignment euclidean_target_neighbors(const Dataset& data, int k) {
  if (k < 1) throw ContractError("euclidean_target_neighbors: k must be >= 1");
  const Matrix dist = pairwise_squared_distances(MetricMatrix::identity(data.dim()), data);
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::pair<double, int>> mates;
  for (int i = 0; i < data.n(); ++i) {
    mates.clear();
    for (int j = 0; j < data.n(); ++j)
      if (j != i && data.labels[j] == data.labels[i]) mates.emplace_back(dist(i, j), j);
    if (static_cast<int>(mates.size()) < k)
      throw ContractError("euclidean_target_neighbors: instance " + std::to_string(i) +
                          " has only " + std::to_string(mates.size()) +
                          " same-class mates, needs " + std::to_string(k));
    std::sort(mates.begin(), mates.end());
    for (int t = 0; t < k; ++t) pairs.emplace_back(i, mates[static_cast<std::size_t>(t)].second);
  }
  return NeighborhoodAssignment::from_pairs(data.n(), std::move(pairs));
}

struct FitOutcome {
  MetricMatrix metric;
  std::vector<double> trace;
  bool has_assignment = false;
  NeighborhoodAssignment assignment;
  int k_min = 0, k_max = 0, k_av = 0;
  std::string stop_reason;  // ln-* methods
  int iterations = 0;
  bool grid_ran = false;
  double grid_inner_accuracy = 0.0;
  std::vector<std::string> notes;  // skipped grid points and similar, deterministic
};

inline FitOutcome fit_method(const MethodSpec& method, const Dataset& train, std::uint64_t seed);

namespace detail {

inline const char* stop_reason_name(LnmlStop stop) {
  switch (stop) {
    case LnmlStop::kToleranceReached: return "tolerance";
    case LnmlStop::kAssignmentFixedPoint: return "fixed-point";
    case LnmlStop::kIterationCap: return "iteration-cap";
  }
  return "?";
}

struct BudgetPoint {
  int k_min = 0, k_max = 0, k_av = 0;
};

inline std::vector<BudgetPoint> grid_points(const MethodSpec& method) {
  std::vector<BudgetPoint> points;
  if (method.kind == MethodKind::kLnLmnn) {
    for (int k_min : method.grid.k_min_values)
      for (int k_max : method.grid.k_max_values)
        if (k_min <= method.k_av && method.k_av <= k_max)
          points.push_back({k_min, k_max, method.k_av});
  } else {
    for (int k : method.grid.k_av_values) points.push_back({k, k, k});
  }
  if (points.empty())
    throw ContractError("grid for method '" + method.name +
                        "' is empty after the k_min <= k_av <= k_max filter");
  return points;
}

// Inner cross-validation over the grid. Preprocessing is already applied to
// `train`, so the inner pipeline only fits the metric. Infeasible points are
// skipped with a note; ties keep the earliest grid point.
inline BudgetPoint select_budget(const MethodSpec& method, const Dataset& train,
                                 std::uint64_t seed, FitOutcome& outcome) {
  const std::vector<BudgetPoint> points = grid_points(method);
  const FoldPlan inner_plan = make_fold_plan(train.labels, method.grid.inner_folds, seed);

  int best = -1;
  double best_accuracy = -1.0;
  for (std::size_t idx = 0; idx < points.size(); ++idx) {
    const BudgetPoint& point = points[idx];
    const std::string tag = "(" + std::to_string(point.k_min) + "," + std::to_string(point.k_max) +
                            "," + std::to_string(point.k_av) + ")";
    const NeighborhoodBudget budget(point.k_min, point.k_max, point.k_av);

    bool feasible = true;
    for (int fold = 1; fold <= method.grid.inner_folds && feasible; ++fold) {
      IntVector labels(static_cast<Eigen::Index>(inner_plan.train_indices(fold).size()));
      int at = 0;
      for (int row : inner_plan.train_indices(fold)) labels[at++] = train.labels[row];
      const FeasibilityVerdict verdict =
          check_feasibility(PairCostTable::candidates_from_labels(labels), budget);
      if (!verdict.feasible) {
        feasible = false;
        outcome.notes.push_back("skipped infeasible grid point " + tag + ": " + verdict.reason);
        log(LogLevel::kWarn, "method '" + method.name + "': skipping grid point " + tag + ": " +
                                 verdict.reason);
      }
    }
    if (!feasible) continue;

    MethodSpec candidate = method;
    candidate.grid = BudgetGrid{};
    candidate.k_min = point.k_min;
    candidate.k_max = point.k_max;
    candidate.k_av = point.k_av;
    if (method.grid.max_outer_iters > 0) candidate.max_outer_iters = method.grid.max_outer_iters;
    if (method.grid.max_iters > 0) {
      candidate.lmnn.max_iters = method.grid.max_iters;
      candidate.mcml.max_iters = method.grid.max_iters;
    }

    const TrainProcedure pipeline = [candidate](const Dataset& inner_train,
                                                std::uint64_t inner_seed) -> Predictor {
      FitOutcome fit = fit_method(candidate, inner_train, inner_seed);
      return [inner_train, metric = std::move(fit.metric), k = candidate.knn_k](const Matrix& q) {
        return knn_predict(metric, inner_train, q, k);
      };
    };

    try {
      const CvResult cv = cross_validate(train, pipeline, method.grid.inner_folds, seed);
      log(LogLevel::kDebug, "method '" + method.name + "': grid point " + tag +
                                " inner accuracy " + std::to_string(cv.accuracy));
      if (cv.accuracy > best_accuracy) {
        best_accuracy = cv.accuracy;
        best = static_cast<int>(idx);
      }
    } catch (const std::exception& e) {
      outcome.notes.push_back("grid point " + tag + " failed: " + e.what());
      log(LogLevel::kWarn,
          "method '" + method.name + "': grid point " + tag + " failed: " + e.what());
    }
  }
  if (best < 0)
    throw Error("method '" + method.name + "': every grid point was infeasible or failed");
  outcome.grid_ran = true;
  outcome.grid_inner_accuracy = best_accuracy;
  return points[static_cast<std::size_t>(best)];
}

}  // namespace detail

inline FitOutcome fit_method(const MethodSpec& method, const Dataset& train, std::uint64_t seed) {
  FitOutcome outcome;
  const MetricMatrix identity = MetricMatrix::identity(train.dim());

  switch (method.kind) {
    case MethodKind::kEuclidean: {
      outcome.metric = identity;
      return outcome;
    }
    case MethodKind::kLmnn: {
      outcome.assignment = euclidean_target_neighbors(train, method.k_av);
      outcome.has_assignment = true;
      outcome.k_min = outcome.k_max = outcome.k_av = method.k_av;
      FitResult fit = lmnn_fit(train, outcome.assignment, identity, method.lmnn);
      outcome.metric = std::move(fit.metric);
      outcome.trace = std::move(fit.trace);
      outcome.iterations = fit.iterations;
      outcome.stop_reason = fit.converged ? "tolerance" : "iteration-cap";
      return outcome;
    }
    case MethodKind::kMcml: {
      FitResult fit = mcml_fit_global(train, identity, method.mcml);
      outcome.metric = std::move(fit.metric);
      outcome.trace = std::move(fit.trace);
      outcome.iterations = fit.iterations;
      outcome.stop_reason = fit.converged ? "tolerance" : "iteration-cap";
      return outcome;
    }
    case MethodKind::kLnLmnn:
    case MethodKind::kLnMcml: {
      MethodSpec resolved = method;
      if (method.grid.enabled()) {
        const detail::BudgetPoint point = detail::select_budget(method, train, seed, outcome);
        resolved.grid = BudgetGrid{};
        resolved.k_min = point.k_min;
        resolved.k_max = point.k_max;
        resolved.k_av = point.k_av;
      }
      LnmlConfig config;
      config.learner =
          method.kind == MethodKind::kLnLmnn ? LnmlLearner::kLnLmnn : LnmlLearner::kLnMcml;
      config.budget = NeighborhoodBudget(resolved.k_min, resolved.k_max, resolved.k_av);
      config.max_outer_iters = resolved.max_outer_iters;
      config.outer_tol = resolved.outer_tol;
      config.lmnn = resolved.lmnn;
      config.mcml = resolved.mcml;

      const LnmlReport report = lnml_fit(train, config, identity);
      outcome.metric = report.final_metric;
      outcome.assignment = report.final_assignment;
      outcome.has_assignment = true;
      outcome.k_min = resolved.k_min;
      outcome.k_max = resolved.k_max;
      outcome.k_av = resolved.k_av;
      outcome.trace = report.outer_objective_trace;
      outcome.iterations = report.outer_iterations_used;
      outcome.stop_reason = detail::stop_reason_name(report.stop_reason);
      return outcome;
    }
  }
  throw ContractError("fit_method: unhandled method kind");
}

// ---------------------------------------------------------------------------
// Benchmark

struct MethodResult {
  MethodSpec spec;
  bool failed = false;
  std::string error;
  double accuracy = 0.0;
  IntVector predictions;                    // out-of-fold, length n
  std::vector<nlohmann::json> fold_details; // one entry per fold
  double seconds = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  int n = 0, dim = 0, classes = 0;
  std::vector<std::string> fold_warnings;
  std::vector<MethodResult> results;
  bool has_comparison = false;
  ComparisonMatrix comparison;
  double total_seconds = 0.0;
};

namespace detail {

inline nlohmann::json outcome_to_json(const FitOutcome& outcome) {
  nlohmann::json out;
  out["iterations"] = outcome.iterations;
  if (!outcome.stop_reason.empty()) out["stop_reason"] = outcome.stop_reason;
  out["trace"] = outcome.trace;
  if (outcome.has_assignment)
    out["budget"] = {{"k_min", outcome.k_min}, {"k_max", outcome.k_max}, {"k_av", outcome.k_av}};
  if (outcome.grid_ran) out["grid_inner_accuracy"] = outcome.grid_inner_accuracy;
  if (!outcome.notes.empty()) out["notes"] = outcome.notes;
  return out;
}

// Preprocessing models are fitted inside the training fold and captured by
// the returned predictor, so the held-out fold never leaks into them.
inline TrainProcedure make_method_pipeline(const MethodSpec& method, const PreprocessSpec& prep,
                                           std::vector<nlohmann::json>* fold_details,
                                           const std::map<std::uint64_t, int>* fold_by_seed) {
  return [method, prep, fold_details, fold_by_seed](const Dataset& raw_train,
                                                    std::uint64_t fold_seed) -> Predictor {
    Dataset train = raw_train;
    std::shared_ptr<Standardizer> standardizer;
    std::shared_ptr<PcaModel> pca;
    if (prep.standardize) {
      standardizer = std::make_shared<Standardizer>(standardize_fit(train));
      train = standardize_apply(*standardizer, train);
    }
    if (prep.use_pca) {
      pca = std::make_shared<PcaModel>(pca_fit(train, prep.pca));
      train = pca_transform(*pca, train);
    }

    FitOutcome outcome = fit_method(method, train, fold_seed);
    if (fold_details && fold_by_seed) {
      const auto hit = fold_by_seed->find(fold_seed);
      if (hit != fold_by_seed->end())
        (*fold_details)[static_cast<std::size_t>(hit->second - 1)] = outcome_to_json(outcome);
    }

    return [train = std::move(train), metric = std::move(outcome.metric), standardizer, pca,
            k = method.knn_k](const Matrix& raw_queries) {
      Matrix queries = raw_queries;
      if (standardizer) queries = standardize_apply(*standardizer, queries);
      if (pca) queries = pca_transform(*pca, queries);
      return knn_predict(metric, train, queries, k);
    };
  };
}

}  // namespace detail

inline ExperimentReport run_benchmark(const ExperimentConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();

  const LoadedCsv loaded = load_csv(config.dataset_path, config.label_column, config.has_header);
  const Dataset& data = loaded.data;
  validate_dataset(data);

  ExperimentReport report;
  report.config = config;
  report.n = data.n();
  report.dim = data.dim();
  report.classes = data.num_classes();

  const FoldPlan plan = make_fold_plan(data.labels, config.folds, config.seed);
  report.fold_warnings = plan.warnings;
  for (const std::string& warning : plan.warnings) detail::log(LogLevel::kWarn, warning);

  std::map<std::uint64_t, int> fold_by_seed;
  for (int fold = 1; fold <= config.folds; ++fold)
    fold_by_seed[detail::seed_combine(config.seed, static_cast<std::uint64_t>(fold))] = fold;

  for (const MethodSpec& method : config.methods) {
    MethodResult result;
    result.spec = method;
    result.fold_details.assign(static_cast<std::size_t>(config.folds), nlohmann::json::object());
    const auto t_method = std::chrono::steady_clock::now();
    detail::log(LogLevel::kInfo, "running method '" + method.name + "' on " + config.dataset_path);
    try {
      const CvResult cv = cross_validate(
          data,
          detail::make_method_pipeline(method, config.preprocess, &result.fold_details, &fold_by_seed),
          config.folds, config.seed, config.workers);
      result.accuracy = cv.accuracy;
      result.predictions = cv.predictions;
      detail::log(LogLevel::kInfo, "method '" + method.name + "' accuracy " +
                                       std::to_string(100.0 * cv.accuracy) + "%");
    } catch (const std::exception& e) {
      result.failed = true;
      result.error = e.what();
      detail::log(LogLevel::kError, "method '" + method.name + "' failed: " + result.error);
    }
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_method).count();
    report.results.push_back(std::move(result));
  }

  std::vector<int> ok;
  for (std::size_t m = 0; m < report.results.size(); ++m)
    if (!report.results[m].failed) ok.push_back(static_cast<int>(m));
  if (!ok.empty()) {
    std::vector<std::string> names;
    std::vector<double> accuracies;
    for (int m : ok) {
      names.push_back(report.results[static_cast<std::size_t>(m)].spec.name);
      accuracies.push_back(report.results[static_cast<std::size_t>(m)].accuracy);
    }
    Matrix p_values = Matrix::Constant(static_cast<Eigen::Index>(ok.size()),
                                       static_cast<Eigen::Index>(ok.size()), 1.0);
    for (std::size_t a = 0; a < ok.size(); ++a)
      for (std::size_t b = a + 1; b < ok.size(); ++b) {
        const double p =
            mcnemar_test(report.results[static_cast<std::size_t>(ok[a])].predictions,
                         report.results[static_cast<std::size_t>(ok[b])].predictions, data.labels);
        p_values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = p;
        p_values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = p;
      }
    report.comparison = make_comparison_matrix(std::move(names), std::move(accuracies),
                                               std::move(p_values));
    report.has_comparison = true;
  }

  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// Timings live under the single "timings" key so deterministic comparisons
// can drop them in one place.
inline nlohmann::json report_to_json(const ExperimentReport& report, bool include_timings = true) {
  nlohmann::json out;
  out["toolkit_version"] = kVersion;
  out["dataset"] = {{"path", report.config.dataset_path},
                    {"n", report.n},
                    {"dim", report.dim},
                    {"classes", report.classes}};
  out["config"] = config_to_json(report.config);
  out["fold_warnings"] = report.fold_warnings;

  nlohmann::json methods = nlohmann::json::array();
  for (const MethodResult& result : report.results) {
    nlohmann::json entry;
    entry["name"] = result.spec.name;
    entry["kind"] = method_kind_name(result.spec.kind);
    entry["failed"] = result.failed;
    if (result.failed) {
      entry["error"] = result.error;
    } else {
      entry["accuracy"] = result.accuracy;
      entry["predictions"] = std::vector<int>(result.predictions.begin(), result.predictions.end());
      entry["folds"] = result.fold_details;
    }
    methods.push_back(std::move(entry));
  }
  out["methods"] = methods;
  if (report.has_comparison) out["comparison"] = comparison_to_json(report.comparison);

  if (include_timings) {
    nlohmann::json timings;
    timings["total_seconds"] = report.total_seconds;
    nlohmann::json per_method;
    for (const MethodResult& result : report.results) per_method[result.spec.name] = result.seconds;
    timings["per_method"] = per_method;
    out["timings"] = timings;
  }
  return out;
}

inline std::string report_to_text(const ExperimentReport& report) {
  std::ostringstream out;
  out << "dataset " << report.config.dataset_path << "  n=" << report.n << " d=" << report.dim
      << " classes=" << report.classes << "  folds=" << report.config.folds
      << " seed=" << report.config.seed << "\n\n";
  if (report.has_comparison) out << comparison_to_text(report.comparison);
  for (const MethodResult& result : report.results)
    if (result.failed) out << "FAILED " << result.spec.name << ": " << result.error << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Train: fit one method on the full dataset and persist it.

inline ModelFile run_train(const ExperimentConfig& config) {
  config.validate();
  if (config.methods.size() != 1)
    throw ContractError("config.methods: train expects exactly one method, got " +
                        std::to_string(config.methods.size()));
  const MethodSpec& method = config.methods[0];

  const LoadedCsv loaded = load_csv(config.dataset_path, config.label_column, config.has_header);
  Dataset data = loaded.data;
  validate_dataset(data);
  if (config.preprocess.standardize) data = standardize_apply(standardize_fit(data), data);
  if (config.preprocess.use_pca) data = pca_transform(pca_fit(data, config.preprocess.pca), data);

  const FitOutcome outcome = fit_method(method, data, config.seed);

  ModelFile model;
  model.method = method.name;
  model.seed = config.seed;
  model.metric = outcome.metric;
  model.has_assignment = outcome.has_assignment;
  model.assignment = outcome.assignment;
  model.k_min = outcome.k_min;
  model.k_max = outcome.k_max;
  model.k_av = outcome.k_av;
  model.trace = outcome.trace;
  return model;
}

}  // namespace lnml
