#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "medt/dataset.hpp"
#include "medt/schema.hpp"

namespace medt {

enum class ModelKind : uint8_t { logistic, saturated, constant, table, perturbed };

// Every factor is materialized as a conditional probability table over the
// node's reachable stochastic parent configs; the fitted form (coefficients
// etc.) is kept as metadata.  Rows are clamped to [p_min, 1-p_min] and
// renormalized at construction.
struct NodeModel {
  ModelKind kind = ModelKind::table;
  std::vector<double> cpt;  // [pa_idx * n_levels + level]

  std::vector<double> coef;        // logistic: intercept then slopes
  std::vector<int> coef_parents;   // parent node index per slope
  std::vector<double> coef_se;     // from the final IRLS information matrix
  double marginal_mean = -1.0;     // observed mean on stochastic rows (binary)
  int empty_strata = 0;
  std::vector<std::string> warnings;
};

struct FactorizedLikelihood {
  std::shared_ptr<const Schema> schema;
  std::vector<std::shared_ptr<const NodeModel>> models;
  double p_min = 1e-6;

  double prob(int node, int32_t pa_idx, int level) const {
    return models[node]->cpt[static_cast<size_t>(pa_idx) * schema->nodes[node].n_levels + level];
  }
};

enum class FitModel : uint8_t { logistic, saturated };

struct ModelSpec {
  FitModel default_model = FitModel::logistic;
  std::unordered_map<std::string, FitModel> per_node;
  // Baseline nodes always get saturated-empirical fits regardless.
};

struct FitOptions {
  double p_min = 1e-6;
  int irls_max_iter = 100;
  double irls_tol = 1e-8;
};

FactorizedLikelihood fit_initial(const Dataset& data, const ModelSpec& spec,
                                 const FitOptions& opts = FitOptions());

// Conditional probability of node = value given the values of all prior
// nodes; resolves degeneracy (forced values have probability one).
double conditional_prob(const FactorizedLikelihood& lik, int node, int value,
                        const int8_t* parent_values);

// Replaces each listed node's factor by a constant: its fit-time marginal
// sample mean plus `bias`, clamped to `bounds`.  Binary nodes only.
FactorizedLikelihood misspecify(const FactorizedLikelihood& lik,
                                const std::vector<std::string>& nodes, double bias,
                                std::pair<double, double> bounds = {0.01, 0.99});

// One multiplicative least-favorable update at one node:
// p_new = (1 + sum_k eps[k] * direction[k]) * p_old.
struct FluctuationLayer {
  int node = -1;
  std::vector<std::vector<double>> directions;  // cpt layout each
  std::vector<double> epsilons;
};

// Throws std::domain_error if a multiplier goes negative; checks that each
// row still sums to one within 1e-10 before the exact renormalization.
FactorizedLikelihood apply_fluctuation(const FactorizedLikelihood& lik,
                                       const FluctuationLayer& layer);

// Mean over rows of the log joint density (all factors, treatments included).
double log_likelihood(const FactorizedLikelihood& lik, const Dataset& data);

// Truth-style construction from fixed logistic coefficients.
struct LogisticTerm {
  int parent = -1;
  double coef = 0.0;
};
struct LogisticSpec {
  double intercept = 0.0;
  std::vector<LogisticTerm> terms;
};
FactorizedLikelihood likelihood_from_logistic(std::shared_ptr<const Schema> schema,
                                              const std::vector<LogisticSpec>& specs,
                                              double p_min = 1e-6);

std::string likelihood_to_json(const FactorizedLikelihood& lik);
FactorizedLikelihood likelihood_from_json(std::shared_ptr<const Schema> schema,
                                          const std::string& text);

// Ancestral sampling of full trajectories (degeneracy respected).
Trajectory sample_trajectory(const FactorizedLikelihood& lik, class Rng& rng);
Dataset sample_dataset(const FactorizedLikelihood& lik, size_t n, class Rng& rng);

double expit(double x);

}  // namespace medt
