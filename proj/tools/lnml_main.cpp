// lnml command line: train / benchmark / inspect / neighborhood.
//
// Exit codes: 0 success, 1 validation error, 2 training failure, 3 IO or
// schema error. Logs go to stderr (level via LNML_LOG or --verbose),
// results go to stdout or to --out.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lnml/benchmark.hpp"
#include "lnml/model_io.hpp"
#include "lnml/version.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string dataset;
  std::string label_col;
  std::vector<std::string> methods;
  int k_min = 0, k_max = 0, k_av = 0;
  int folds = 0;
  std::uint64_t seed = 0;
  std::string pca;
  bool standardize = false;
  std::string out;
  int workers = 0;
  bool verbose = false;
  std::string model_path;  // inspect, neighborhood
};

void add_common_options(CLI::App* cmd, CliOptions* opts) {
  cmd->add_option("--config", opts->config_path, "JSON config file; flags override its fields");
  cmd->add_option("--dataset", opts->dataset, "CSV dataset path");
  cmd->add_option("--label-col", opts->label_col, "label column name or zero-based index");
  cmd->add_option("--method", opts->methods,
                  "method kind (euclidean, lmnn, ln-lmnn, mcml, ln-mcml); repeatable");
  cmd->add_option("--k-min", opts->k_min, "neighborhood budget lower bound");
  cmd->add_option("--k-max", opts->k_max, "neighborhood budget upper bound");
  cmd->add_option("--k-av", opts->k_av, "average targets per instance");
  cmd->add_option("--folds", opts->folds, "cross-validation folds");
  cmd->add_option("--seed", opts->seed, "random seed");
  cmd->add_option("--pca", opts->pca, "retain a component count or 'var:<fraction>'");
  cmd->add_flag("--standardize", opts->standardize, "standardize features per training fold");
  cmd->add_option("--out", opts->out, "output path");
  cmd->add_option("--workers", opts->workers, "worker threads for fold-level parallelism");
  cmd->add_flag("--verbose", opts->verbose, "debug logging on stderr");
}

lnml::ExperimentConfig build_config(const CLI::App& cmd, const CliOptions& opts) {
  lnml::ExperimentConfig config;
  if (!opts.config_path.empty()) config = lnml::load_config(opts.config_path);

  if (cmd.count("--dataset")) config.dataset_path = opts.dataset;
  if (cmd.count("--label-col")) config.label_column = opts.label_col;
  if (cmd.count("--folds")) config.folds = opts.folds;
  if (cmd.count("--seed")) config.seed = opts.seed;
  if (cmd.count("--workers")) config.workers = opts.workers;
  if (cmd.count("--standardize")) config.preprocess.standardize = true;
  if (cmd.count("--pca")) {
    config.preprocess.use_pca = true;
    config.preprocess.pca = lnml::parse_pca_retain(opts.pca, "--pca");
  }

  if (!opts.methods.empty()) {
    config.methods.clear();
    for (const std::string& name : opts.methods) {
      lnml::MethodSpec spec;
      spec.kind = lnml::parse_method_kind(name, "--method");
      spec.name = name;
      config.methods.push_back(spec);
    }
  }
  if (cmd.count("--k-min") || cmd.count("--k-max") || cmd.count("--k-av")) {
    if (config.methods.size() != 1)
      throw lnml::ContractError(
          "--k-min/--k-max/--k-av apply to a single method; use a config file for several");
    lnml::MethodSpec& spec = config.methods[0];
    if (cmd.count("--k-av")) spec.k_av = opts.k_av;
    if (cmd.count("--k-min")) spec.k_min = opts.k_min;
    if (cmd.count("--k-max")) spec.k_max = opts.k_max;
    if (!cmd.count("--k-min") && cmd.count("--k-av")) spec.k_min = spec.k_av;
    if (!cmd.count("--k-max") && cmd.count("--k-av")) spec.k_max = spec.k_av;
  }
  return config;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw lnml::IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw lnml::IoError("failed while writing " + path);
}

int run_train_command(const CLI::App& cmd, const CliOptions& opts) {
  lnml::ExperimentConfig config = build_config(cmd, opts);
  if (!opts.out.empty()) config.out_model = opts.out;
  if (config.out_model.empty()) config.out_model = "model.json";
  const lnml::ModelFile model = lnml::run_train(config);
  lnml::save_model(config.out_model, model);
  std::cout << "wrote " << config.out_model << " (method " << model.method << ", dim "
            << model.metric.dim() << ")\n";
  return 0;
}

int run_benchmark_command(const CLI::App& cmd, const CliOptions& opts) {
  lnml::ExperimentConfig config = build_config(cmd, opts);
  if (!opts.out.empty()) config.out_json = opts.out;
  const lnml::ExperimentReport report = lnml::run_benchmark(config);
  std::cout << lnml::report_to_text(report);
  if (!config.out_json.empty())
    write_text_file(config.out_json, lnml::report_to_json(report).dump(2) + "\n");
  if (!config.out_text.empty()) write_text_file(config.out_text, lnml::report_to_text(report));
  return 0;
}

int run_inspect_command(const CliOptions& opts) {
  const lnml::ModelFile model = lnml::load_model(opts.model_path);
  std::cout << lnml::model_summary(model).dump(2) << "\n";
  return 0;
}

int run_neighborhood_command(const CliOptions& opts) {
  const lnml::ModelFile model = lnml::load_model(opts.model_path);
  if (!model.has_assignment)
    throw lnml::ContractError("model " + opts.model_path + " has no neighborhood assignment");
  std::string csv = "instance,target\n";
  for (const auto& pair : model.assignment.pairs)
    csv += std::to_string(pair.first) + "," + std::to_string(pair.second) + "\n";
  if (!opts.out.empty())
    write_text_file(opts.out, csv);
  else
    std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learning neighborhoods for metric learning"};
  app.set_version_flag("--version", lnml::kVersion);
  app.require_subcommand(1);

  CliOptions opts;
  CLI::App* train = app.add_subcommand("train", "fit one method on a dataset and save the model");
  add_common_options(train, &opts);
  CLI::App* benchmark =
      app.add_subcommand("benchmark", "cross-validate methods and compare them");
  add_common_options(benchmark, &opts);
  CLI::App* inspect = app.add_subcommand("inspect", "summarize a saved model");
  inspect->add_option("model", opts.model_path, "model file")->required();
  CLI::App* neighborhood =
      app.add_subcommand("neighborhood", "dump a model's neighborhood assignment as CSV");
  neighborhood->add_option("model", opts.model_path, "model file")->required();
  neighborhood->add_option("--out", opts.out, "output CSV path (default stdout)");
  neighborhood->add_flag("--verbose", opts.verbose, "debug logging on stderr");
  inspect->add_flag("--verbose", opts.verbose, "debug logging on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (opts.verbose) lnml::set_log_level(lnml::LogLevel::kDebug);

  try {
    if (train->parsed()) return run_train_command(*train, opts);
    if (benchmark->parsed()) return run_benchmark_command(*benchmark, opts);
    if (inspect->parsed()) return run_inspect_command(opts);
    if (neighborhood->parsed()) return run_neighborhood_command(opts);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const lnml::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const lnml::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 3;
  } catch (const lnml::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 2;
  }
}
