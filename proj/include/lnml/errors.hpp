#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace lnml {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition or type invariant (bad dimensions, bad config, ...).
struct ContractError : Error {
  using Error::Error;
};

// Numeric breakdown (non-finite input to an eigensolver and the like).
struct NumericError : Error {
  using Error::Error;
};

// An optimizer hit a non-finite loss; carries the last metric that was valid.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, Eigen::MatrixXd last_valid)
      : Error(what), last_valid_metric(std::move(last_valid)) {}
  Eigen::MatrixXd last_valid_metric;
};

// Filesystem / parsing problems.
struct IoError : Error {
  using Error::Error;
};

// Model file with an unknown or corrupted schema.
struct SchemaError : Error {
  using Error::Error;
};

}  // namespace lnml
