#pragma once

#include "medt/lasso.hpp"
#include "medt/tmle.hpp"

namespace medt {

struct HalOptions {
  int knot_cap = 2000;
  int n_folds = 5;
  int n_bounds = 30;
  double bound_override = -1.0;  // <0 cross-validates; finite fixes the bound; inf = zero penalty
  size_t resample_n = 0;         // 0: callers default to the analysis sample size
  int beta_refits = 2;
  LassoOptions lasso;
  TMLEConfig tmle;  // inner one-step settings
};

// One indicator knot: thresholds over a parent subset plus one over the node.
struct HalKnot {
  int8_t xthr = 1;
  std::vector<int32_t> pos;
  std::vector<int8_t> thr;
  double support = 0.0;  // resample rows matching the parent pattern
};

// Knots come from observed parent subvectors in the resample, enumerated by
// increasing subset size, deduplicated on their support pattern over the
// active configs, ranked by support, and capped.
struct HalBasis {
  int node = -1;
  std::vector<HalKnot> knots;
  std::vector<std::vector<int32_t>> config_knots;  // per active config: matching knots
};

HalBasis build_hal_basis(const Schema& schema, int node, const Dataset& resample, int knot_cap);

// Inverse-probability gradients per trajectory class; their projections onto
// the factor tangent spaces are the influence-curve components.  Blank
// treatment coordinates (possible only after an absorbing outcome) match any
// arm with unit density, which keeps the gradient means equal to the
// g-computation values on absorbing schemas.
struct HalGradients {
  std::vector<double> lr;  // response for covariate/outcome factors
  std::vector<double> z;   // response for mediator factors
};
HalGradients hal_gradients(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                           const RoleArms& arms);

// Per (target, node) lasso fits of the gradients on centered basis columns
// 1{pa >= pa_j} (1{X >= x_j} - P(X >= x_j | pa)); rebuild() re-centers under a
// new likelihood with the coefficients frozen.  The baseline component stays
// exact.
struct HalProjection {
  std::shared_ptr<const Schema> schema;
  TargetSpec spec;
  std::vector<TargetKey> keys;
  std::vector<std::string> labels;
  std::vector<HalBasis> bases;                         // per node
  std::vector<std::vector<std::vector<double>>> beta;  // [target][node][knot]
  std::vector<std::vector<double>> bound;              // [target][node]
  std::vector<std::vector<double>> cv_risk;            // [target][node]

  EICBundle rebuild(const FactorizedLikelihood& lik) const;
};

// Draws a resample of resample_n rows from lik, builds the bases on it, and
// cross-validates the norm bound per fit unless overridden.
HalProjection fit_hal_eic(const FactorizedLikelihood& lik, const TargetSpec& spec, Rng& rng,
                          const HalOptions& opts);

struct HalTmleResult {
  TMLEResult inner;           // state after the last one-step run
  HalProjection projection;   // the final coefficient fit
  EICBundle initial_bundle;   // first projection evaluated at the initial fit
  int refits = 0;
};

// Alternates coefficient refits with frozen-coefficient one-step runs; stops
// early when a refit already meets the stopping cut.
HalTmleResult haleic_tmle(const FactorizedLikelihood& init, const Dataset& data,
                          const TargetSpec& spec, Rng& rng, HalOptions opts);

}  // namespace medt
