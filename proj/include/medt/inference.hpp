#pragma once

#include "medt/eic.hpp"
#include "medt/rng.hpp"

namespace medt {

struct InferenceOptions {
  double level = 0.95;
  size_t mc_draws = 100000;
};

// Joint normal-approximation intervals from per-class influence curves.
// covariance is the uncentered empirical second moment P_n D D^T; the
// simultaneous quantile is the Monte Carlo 0.95 point of max |Z| over the
// implied correlation, never below the pointwise quantile.
struct CIResult {
  std::vector<std::string> labels;
  std::vector<double> estimate;
  std::vector<double> se;
  std::vector<double> lo_pt, hi_pt;
  std::vector<double> lo_sim, hi_sim;
  double z_pointwise = 0.0;
  double q_simultaneous = 0.0;
  std::vector<double> covariance;   // k x k row-major
  std::vector<double> correlation;  // k x k row-major
  double ridge_used = 0.0;
};

CIResult simultaneous_ci(const std::vector<std::string>& labels,
                         const std::vector<double>& estimates,
                         const std::vector<std::vector<double>>& class_curves,
                         const Dataset& data, Rng& rng,
                         const InferenceOptions& opts = InferenceOptions());

// Indirect/direct/total contrasts per outcome via curve differences.
struct ContrastSet {
  std::vector<std::string> labels;
  std::vector<double> estimates;
  std::vector<std::vector<double>> class_curves;
};

ContrastSet effect_contrasts(const Schema& schema, const TargetSpec& spec, const EICBundle& bundle);

}  // namespace medt
