#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lnml/core.hpp"
#include "lnml/errors.hpp"

namespace lnml {

// Shared result shape for the metric fitters. The trace holds the full loss
// at every accepted refresh boundary and is non-increasing by construction.
struct FitResult {
  MetricMatrix metric;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;  // stopped on tol rather than the iteration cap
};

namespace detail {

struct PgdEngineConfig {
  int max_iters = 200;
  double step_size = 1e-3;
  double step_decay = 0.5;
  double tol = 1e-5;
  int refresh_every = 10;
  double grad_scale = 1.0;  // gradients are multiplied by this before stepping

  void validate(const char* where) const {
    if (max_iters < 0) throw ContractError(std::string(where) + ": max_iters must be >= 0");
    if (!(step_size > 0.0) || !std::isfinite(step_size))
      throw ContractError(std::string(where) + ": step_size must be positive");
    if (!(step_decay > 0.0) || step_decay > 1.0)
      throw ContractError(std::string(where) + ": step_decay must be in (0, 1]");
    if (!(tol > 0.0) || !std::isfinite(tol))
      throw ContractError(std::string(where) + ": tol must be positive");
    if (refresh_every < 1)
      throw ContractError(std::string(where) + ": refresh_every must be >= 1");
  }
};

// Projected gradient with backtracking-style decay over a segment surrogate.
//
// The Problem type supplies:
//   double eval(const MetricMatrix&)    loss of the current segment surrogate;
//                                       caches whatever gradient() needs
//   Matrix gradient()                   gradient at the last eval() point
//   double refresh(const MetricMatrix&) rebuild segment state (e.g. active
//                                       triplets) at the point; returns the
//                                       full objective there
//
// Within a segment, a step is accepted only if the surrogate does not
// increase; the step size decays on rejection and never grows. At segment
// boundaries the full objective is re-measured: a segment that ends higher
// than it started is discarded wholesale (revert + decay), so the recorded
// boundary trace is non-increasing. The tol stop fires only on segments that
// actually accepted a step, never on an all-rejected stall. For problems
// whose surrogate is the full objective (MCML), refresh_every = 1 reduces
// this to plain monotone backtracking descent.
template <typename Problem>
FitResult projected_gradient(Problem& problem, const MetricMatrix& m0,
                             const PgdEngineConfig& cfg) {
  cfg.validate("projected_gradient");

  MetricMatrix boundary = m0;
  double boundary_loss = problem.refresh(boundary);
  if (!std::isfinite(boundary_loss))
    throw DivergenceError("projected_gradient: initial loss is not finite", m0.entries);

  FitResult result;
  result.trace.push_back(boundary_loss);

  MetricMatrix cur = boundary;
  double cur_loss = boundary_loss;  // surrogate == full loss right after refresh
  double eta = cfg.step_size;
  const double eta_floor = cfg.step_size * 1e-16;
  bool cur_state_fresh = true;  // problem caches aligned with `cur`

  while (result.iterations < cfg.max_iters && eta >= eta_floor) {
    bool any_accepted = false;
    for (int s = 0; s < cfg.refresh_every && result.iterations < cfg.max_iters; ++s) {
      if (!cur_state_fresh) {
        cur_loss = problem.eval(cur);
        cur_state_fresh = true;
      }
      const Matrix grad = problem.gradient();
      if (!grad.allFinite())
        throw DivergenceError("projected_gradient: non-finite gradient", boundary.entries);
      // An exactly zero gradient is a fixed point; skip the eigen round-trip
      // so trivially stationary starts are returned bit-identically.
      MetricMatrix candidate =
          grad.isZero(0.0) ? cur : project_psd(cur.entries - (eta * cfg.grad_scale) * grad);
      const double cand_loss = problem.eval(candidate);
      ++result.iterations;
      if (std::isfinite(cand_loss) && cand_loss <= cur_loss) {
        cur = std::move(candidate);
        cur_loss = cand_loss;
        any_accepted = true;
      } else {
        eta *= cfg.step_decay;
        cur_state_fresh = false;  // caches hold the rejected candidate
        if (eta < eta_floor) break;
      }
    }

    const double full = problem.refresh(cur);
    if (!std::isfinite(full))
      throw DivergenceError("projected_gradient: non-finite loss", boundary.entries);
    if (full > boundary_loss) {
      // Segment overshot under fresh state (e.g. new impostors); discard it.
      cur = boundary;
      eta *= cfg.step_decay;
      problem.refresh(cur);
      cur_loss = boundary_loss;
      cur_state_fresh = true;
      continue;
    }
    cur_loss = full;
    cur_state_fresh = true;
    if (any_accepted) {
      const double drop = boundary_loss - full;
      boundary = cur;
      boundary_loss = full;
      result.trace.push_back(full);
      if (drop < cfg.tol * std::max(1.0, std::abs(full))) {
        result.converged = true;
        break;
      }
    }
  }

  result.metric = boundary;
  return result;
}

}  // namespace detail
}  // namespace lnml
