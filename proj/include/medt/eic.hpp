#pragma once

#include <cstdint>

#include "medt/dataset.hpp"
#include "medt/gcomp.hpp"

namespace medt {

// Influence-curve decomposition for one target at one likelihood.  Node
// tables use the conditional-table layout (active parent config * n_levels +
// level) and vanish off the treatment-consistent support, so they double as
// fluctuation directions.  node_pref stores the inverse-probability weight
// alone; table = pref * (Q_next - Q_node).
struct EicComponents {
  TargetKey key;
  double psi = 0.0;
  std::vector<std::vector<double>> node_tables;   // by node; empty when not fluctuated
  std::vector<std::vector<double>> node_pref;     // by node, per parent config
  std::vector<std::vector<uint8_t>> node_floored; // denominator hit the probability floor
  std::vector<double> class_l0;                   // baseline component per trajectory class
  std::vector<double> class_total;                // full curve per trajectory class
};

struct EICBundle {
  std::vector<TargetKey> keys;
  std::vector<std::string> labels;
  std::vector<EicComponents> targets;
};

EICBundle eic_components(const FactorizedLikelihood& lik, const TargetSpec& spec);

// Known stochastic mediator intervention: one table per mediatorZ node in that
// node's conditional-table layout, read with treatment coordinates imputed
// from arm.
struct GammaSpec {
  std::unordered_map<int, std::vector<double>> z_tables;
  std::vector<int8_t> arm;
};

// Curve for E[Y(arm, Gamma)] with Gamma known: mediator factors carry no
// component and mediator ratio numerators come from Gamma.
EicComponents stochastic_intervention_eic(const FactorizedLikelihood& lik, const GammaSpec& gamma,
                                          const OutcomeSpec& outcome,
                                          const std::vector<int8_t>& arm);

// Empirical summary of one target's curve against a dataset.
struct EicReport {
  TargetKey key;
  std::string label;
  double psi = 0.0;
  double pn_total = 0.0;             // empirical mean of the curve
  double sd_total = 0.0;             // empirical standard deviation
  double threshold = 0.0;            // sd / (sqrt(n) log n) stopping cut
  double pn_l0 = 0.0;
  std::vector<double> pn_node;       // empirical mean per node component
  int64_t breach_rows = 0;           // rows touching a floored denominator
};

std::vector<EicReport> empirical_scores(const EICBundle& bundle, const Dataset& data);
EicReport empirical_score(const EicComponents& comp, const Schema& schema,
                          const std::string& label, const Dataset& data);

// Second-order expansion gap R = Psi(P) - Psi(P0) + E_P0 D(P), both as that
// direct sum and in the telescoped per-node product form; the two agree to
// numerical error, and the telescoped form shows which factor pairs drive it.
struct RemainderReport {
  double psi_p = 0.0;
  double psi_p0 = 0.0;
  double p0_d = 0.0;
  double direct = 0.0;
  double factorized = 0.0;
};

RemainderReport exact_remainder(const FactorizedLikelihood& p, const FactorizedLikelihood& p0,
                                const OutcomeSpec& outcome, const InterventionPair& pair,
                                PairRole role);

}  // namespace medt
