#pragma once

#include <iosfwd>

#include "medt/haleic.hpp"
#include "medt/inference.hpp"

namespace medt {

// Two-period all-binary survival benchmark with treatment-confounder
// feedback: per period, censoring and exposure, then a post-exposure
// covariate, a mediator, and an absorbing outcome.  lambda scales the
// exposure assignment's linear predictor, sharpening positivity.
std::shared_ptr<const Schema> benchmark_schema();
FactorizedLikelihood benchmark_truth(std::shared_ptr<const Schema> schema, double lambda,
                                     double p_min = 1e-6);
// Six targets: both outcomes under exposed/exposed, exposed/control-mediator,
// and control/control arm pairings, with censoring held off.
TargetSpec benchmark_targets(std::shared_ptr<const Schema> schema);

struct ScenarioSpec {
  std::string name = "scenario";
  double lambda = 1.0;
  std::vector<std::string> misspecified;  // node names refit as biased constants
  double mis_bias = 0.05;
  size_t n = 1000;
  int replicates = 300;
  std::vector<std::string> estimators = {"initial", "tmle", "hal_initial", "hal_tmle"};
  uint64_t seed = 1;
  TMLEConfig tmle;
  HalOptions hal;
  InferenceOptions inference;
};

std::string scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const std::string& text);

struct TruthReport {
  std::vector<std::string> labels;
  std::vector<double> value;
};
TruthReport true_targets(const FactorizedLikelihood& truth, const TargetSpec& spec);

struct MetricsRow {
  std::string estimator;
  std::string target;
  int replicates = 0;  // successful replicates aggregated
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double coverage = 0.0;   // pointwise intervals
  double width = 0.0;      // mean pointwise interval width
  double cover_sim = 0.0;  // simultaneous intervals
  double width_sim = 0.0;
  double mean_se = 0.0;
  int64_t nonconverged = 0;
  int64_t failures = 0;  // replicates where the estimator threw
};

struct ReplicateOut {
  int replicate = 0;
  std::string estimator;
  std::vector<double> psi, se, lo, hi, lo_sim, hi_sim;  // per target
  bool converged = true;
};

struct StudyResult {
  ScenarioSpec scenario;
  std::vector<std::string> labels;
  TruthReport truth;
  std::vector<MetricsRow> metrics;
  std::vector<ReplicateOut> replicates;
};

// Replicates run under counter-derived seeds, so output is byte-identical
// for any worker count.
StudyResult run_study(const ScenarioSpec& spec, int jobs = 1);

void write_metrics_csv(const StudyResult& res, std::ostream& out);
void write_replicates_csv(const StudyResult& res, std::ostream& out);

}  // namespace medt
