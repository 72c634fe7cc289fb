#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "medt/likelihood.hpp"
#include "medt/schema.hpp"

namespace medt {

// psi_s reads one outcome node: 1{Y_s == level}.
struct OutcomeSpec {
  int node = -1;
  int level = 1;
};

// Which arm feeds which factor group: the mediator draws follow the second
// (prime) arm while covariate/outcome draws follow the first.
enum class PairRole : uint8_t { aa, aap, apap };
const char* role_name(PairRole r);
PairRole role_from_name(const std::string& s);

struct TargetSpec {
  std::vector<OutcomeSpec> outcomes;
  InterventionPair pair;
  std::vector<PairRole> roles = {PairRole::aa, PairRole::aap, PairRole::apap};
};

struct TargetKey {
  int outcome = 0;   // index into TargetSpec::outcomes
  PairRole role = PairRole::aa;
};

std::vector<TargetKey> expand_targets(const TargetSpec& spec);
std::string target_label(const Schema& schema, const TargetSpec& spec, const TargetKey& key);

// JSON form: outcomes (node name + level), arm / arm_prime treatment maps,
// optional role list.
std::string target_spec_to_json(const Schema& schema, const TargetSpec& spec);
TargetSpec target_spec_from_json(const Schema& schema, const std::string& text);

struct RoleArms {
  const int8_t* lr;  // treatment values conditioning R/L factors
  const int8_t* z;   // treatment values conditioning Z factors
};
RoleArms arms_for_role(const InterventionPair& pair, PairRole role);

// Intermediate g-computation functional: value_at(i, values) is the mean of
// psi_s integrating nodes i.. forward, conditioning on the non-treatment
// history in values[0..i) with treatments imputed per arm.  Memoized on the
// packed non-treatment prefix.
class QEvaluator {
 public:
  QEvaluator(const FactorizedLikelihood& lik, const OutcomeSpec& outcome, const RoleArms& arms);

  double psi();
  double value_at(int node, const int8_t* values);

 private:
  double recurse(int i, DegeneracyState st, uint64_t key);
  uint64_t parent_code(int node) const;

  const FactorizedLikelihood& lik_;
  const Schema& schema_;
  OutcomeSpec outcome_;
  RoleArms arms_;
  Trajectory cur_;
  std::vector<std::unordered_map<uint64_t, double>> memo_;
};

double psi(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
           const InterventionPair& pair, PairRole role);

struct EffectDecomposition {
  double psi_aa = 0.0, psi_aap = 0.0, psi_apap = 0.0;
  double nie = 0.0, nde = 0.0, te = 0.0;
};
EffectDecomposition nie_nde(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                            const InterventionPair& pair);

// Independent oracle: the blockwise backward recursion, materialized as
// explicit per-depth tables instead of the memoized forward recursion.
double sequential_regression_psi(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                                 const InterventionPair& pair, PairRole role);

// Random-intervention sampler oracle: draws counterfactual trajectories and
// averages psi_s for every outcome; returns means and standard errors.
struct McResult {
  std::vector<double> mean;
  std::vector<double> se;
};
McResult counterfactual_mc(const FactorizedLikelihood& lik,
                           const std::vector<OutcomeSpec>& outcomes,
                           const InterventionPair& pair, PairRole role, size_t n_draws,
                           class Rng& rng);

}  // namespace medt
