#pragma once

#include <functional>

#include "medt/eic.hpp"

namespace medt {

enum class TmleMode : uint8_t { iterative, onestep };
const char* tmle_mode_name(TmleMode m);
TmleMode tmle_mode_from_name(const std::string& s);

struct TMLEConfig {
  TmleMode mode = TmleMode::onestep;
  int max_iterations = 500;     // one-step path steps, or iterative passes
  double dx = 0.01;             // one-step path step length
  double step_floor = 1e-10;    // halved dx below this aborts the path
  int newton_max_iter = 50;     // iterative per-node epsilon solve
  double newton_tol = 1e-10;
};

struct TmleTraceRow {
  int iteration = 0;
  double max_abs_score = 0.0;  // max over targets of |P_n D|
  double max_threshold = 0.0;  // the matching stopping cut
  double log_lik = 0.0;
  double step = 0.0;
};

struct TMLEResult {
  FactorizedLikelihood fit;
  EICBundle bundle;               // components at the final fit
  std::vector<EicReport> scores;  // empirical summaries at the final fit
  std::vector<double> psi;        // per target
  bool converged = false;
  int iterations = 0;
  std::string stop_reason;
  std::vector<TmleTraceRow> trace;
};

// Both updaters stop when |P_n D_s| <= sd_s / (sqrt(n) log n) for every
// target s.

// Per pass: recompute the curves, then per node solve the multivariate
// epsilon by damped Newton (feasible line search keeps every density
// multiplier positive).  Throws std::runtime_error naming the one-step
// variant when a pass is boundary-pinned and makes no progress.
TMLEResult iterative_tmle(const FactorizedLikelihood& init, const Dataset& data,
                          const TargetSpec& spec, const TMLEConfig& cfg = TMLEConfig());

// Universal path: epsilon_{s,x} = (P_n D_{s,x}) dx / |P_n D| with the norm
// over the full flattened component vector, so log-likelihood ascends at rate
// |P_n D| along the path; dx halves on a negative multiplier or a
// log-likelihood drop.
TMLEResult onestep_tmle(const FactorizedLikelihood& init, const Dataset& data,
                        const TargetSpec& spec, const TMLEConfig& cfg = TMLEConfig());

TMLEResult run_tmle(const FactorizedLikelihood& init, const Dataset& data, const TargetSpec& spec,
                    const TMLEConfig& cfg = TMLEConfig());

// The one-step loop with a pluggable curve supplier, for updates driven by an
// approximate influence curve.  builder must return tables that are
// conditionally centered under its argument.
using BundleBuilder = std::function<EICBundle(const FactorizedLikelihood&)>;
TMLEResult onestep_path(const FactorizedLikelihood& init, const Dataset& data,
                        const BundleBuilder& builder, const TMLEConfig& cfg = TMLEConfig());

}  // namespace medt
