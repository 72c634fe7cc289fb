#include "medt/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "medt/rng.hpp"

namespace medt {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Clamp a CPT row into [p_min, 1-p_min] and renormalize.  A couple of
// passes settle any clamp/renormalize interaction for small supports.
static void clamp_row(double* p, int k, double p_min) {
  if (k == 1) {
    p[0] = 1.0;
    return;
  }
  for (int pass = 0; pass < 3; ++pass) {
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      p[i] = std::min(std::max(p[i], p_min), 1.0 - p_min);
      sum += p[i];
    }
    for (int i = 0; i < k; ++i) p[i] /= sum;
  }
}

// Dense symmetric solve, partial pivoting; fine at IRLS sizes.
static bool solve_linear(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    if (std::fabs(a[piv * n + col]) < 1e-12) return false;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    double d = a[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * n + col] / d;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * b[c];
    b[r] = acc / a[r * n + r];
  }
  return true;
}

namespace {

struct StratumCounts {
  std::vector<double> counts;  // [pa_idx * n_levels + level]
  std::vector<double> total;   // [pa_idx]
};

StratumCounts tabulate(const Dataset& data, int node) {
  const Schema& s = *data.schema;
  int L = s.nodes[node].n_levels;
  size_t n_cfg = s.active_codes[node].size();
  StratumCounts sc;
  sc.counts.assign(n_cfg * L, 0.0);
  sc.total.assign(n_cfg, 0.0);
  for (size_t c = 0; c < s.classes.size(); ++c) {
    if (data.class_count[c] == 0) continue;
    const ClassNode& cn = s.at(static_cast<int32_t>(c), node);
    if (!cn.stochastic) continue;
    double w = static_cast<double>(data.class_count[c]);
    sc.counts[static_cast<size_t>(cn.pa_idx) * L + cn.value] += w;
    sc.total[cn.pa_idx] += w;
  }
  return sc;
}

double stochastic_mean(const Dataset& data, int node) {
  const Schema& s = *data.schema;
  double num = 0.0, den = 0.0;
  for (size_t c = 0; c < s.classes.size(); ++c) {
    if (data.class_count[c] == 0) continue;
    const ClassNode& cn = s.at(static_cast<int32_t>(c), node);
    if (!cn.stochastic) continue;
    num += static_cast<double>(data.class_count[c]) * cn.value;
    den += static_cast<double>(data.class_count[c]);
  }
  return den > 0 ? num / den : -1.0;
}

std::shared_ptr<NodeModel> fit_saturated(const Dataset& data, int node, double p_min) {
  const Schema& s = *data.schema;
  int L = s.nodes[node].n_levels;
  size_t n_cfg = s.active_codes[node].size();
  StratumCounts sc = tabulate(data, node);

  auto m = std::make_shared<NodeModel>();
  m->kind = ModelKind::saturated;
  m->cpt.assign(n_cfg * L, 0.0);
  for (size_t g = 0; g < n_cfg; ++g) {
    bool has_zero = false;
    for (int v = 0; v < L; ++v)
      if (sc.counts[g * L + v] == 0.0) has_zero = true;
    if (sc.total[g] == 0.0) ++m->empty_strata;
    // Raw stratified frequencies; add-one only where a level is unseen,
    // so ratios never hit 0/1 but fully observed strata stay exact.
    for (int v = 0; v < L; ++v) {
      double c = sc.counts[g * L + v], t = sc.total[g];
      m->cpt[g * L + v] = has_zero ? (c + 1.0) / (t + L) : c / t;
    }
    clamp_row(&m->cpt[g * L], L, p_min);
  }
  if (m->empty_strata > 0)
    m->warnings.push_back(std::to_string(m->empty_strata) + " empty strata smoothed");
  m->marginal_mean = stochastic_mean(data, node);
  return m;
}

std::shared_ptr<NodeModel> fit_logistic(const Dataset& data, int node, const FitOptions& opts) {
  const Schema& s = *data.schema;
  const Node& nd = s.nodes[node];
  if (nd.n_levels != 2) {
    auto m = fit_saturated(data, node, opts.p_min);
    m->warnings.push_back("non-binary node, fitted saturated instead of logistic");
    return m;
  }

  // Collapse onto (pa_idx, value) strata; the logistic likelihood only
  // depends on those.
  StratumCounts sc = tabulate(data, node);
  size_t n_cfg = s.active_codes[node].size();

  // Keep parent columns that vary across observed strata.
  std::vector<int> cols;
  for (int j = 0; j < node; ++j) {
    double first = 0.0;
    bool seen = false, varies = false;
    for (size_t g = 0; g < n_cfg; ++g) {
      if (sc.total[g] == 0.0) continue;
      double x = s.active_configs[node][g][j];
      if (!seen) {
        first = x;
        seen = true;
      } else if (x != first) {
        varies = true;
        break;
      }
    }
    if (varies) cols.push_back(j);
  }

  int p = static_cast<int>(cols.size()) + 1;
  std::vector<double> beta(p, 0.0);
  auto design = [&](size_t g, int j) -> double {
    return j == 0 ? 1.0 : static_cast<double>(s.active_configs[node][g][cols[j - 1]]);
  };

  bool converged = false, singular = false;
  std::vector<double> info;  // final weighted X'WX for SEs
  for (int iter = 0; iter < opts.irls_max_iter; ++iter) {
    std::vector<double> xtwx(static_cast<size_t>(p) * p, 0.0);
    std::vector<double> score(p, 0.0);
    for (size_t g = 0; g < n_cfg; ++g) {
      if (sc.total[g] == 0.0) continue;
      double eta = 0.0;
      for (int j = 0; j < p; ++j) eta += beta[j] * design(g, j);
      double mu = expit(eta);
      double w = sc.total[g] * mu * (1.0 - mu);
      double resid = sc.counts[g * 2 + 1] - sc.total[g] * mu;
      for (int j = 0; j < p; ++j) {
        double xj = design(g, j);
        score[j] += xj * resid;
        for (int k = j; k < p; ++k) xtwx[j * p + k] += w * xj * design(g, k);
      }
    }
    for (int j = 0; j < p; ++j)
      for (int k = 0; k < j; ++k) xtwx[j * p + k] = xtwx[k * p + j];
    info = xtwx;
    std::vector<double> step = score;
    std::vector<double> a = xtwx;
    if (!solve_linear(a, step, p)) {
      // Ridge nudge for collinear designs; if still singular, bail out.
      a = xtwx;
      for (int j = 0; j < p; ++j) a[j * p + j] += 1e-8;
      if (!solve_linear(a, step, p)) {
        singular = true;
        break;
      }
    }
    double max_step = 0.0;
    for (int j = 0; j < p; ++j) {
      beta[j] += step[j];
      max_step = std::max(max_step, std::fabs(step[j]));
    }
    if (max_step < opts.irls_tol) {
      converged = true;
      break;
    }
    if (std::fabs(*std::max_element(beta.begin(), beta.end(),
                                    [](double a2, double b2) {
                                      return std::fabs(a2) < std::fabs(b2);
                                    })) > 30.0) {
      break;  // separation: coefficients running away
    }
  }

  if (!converged || singular) {
    auto m = fit_saturated(data, node, opts.p_min);
    m->warnings.push_back(singular ? "singular IRLS system, fitted saturated"
                                   : "logistic fit did not converge, fitted saturated");
    return m;
  }

  auto m = std::make_shared<NodeModel>();
  m->kind = ModelKind::logistic;
  m->coef = beta;
  m->coef_parents = cols;
  // SEs from the inverse information, column by column.
  m->coef_se.assign(p, 0.0);
  for (int j = 0; j < p; ++j) {
    std::vector<double> e(p, 0.0);
    e[j] = 1.0;
    std::vector<double> a = info;
    if (solve_linear(a, e, p) && e[j] > 0) m->coef_se[j] = std::sqrt(e[j]);
  }
  m->cpt.assign(n_cfg * 2, 0.0);
  for (size_t g = 0; g < n_cfg; ++g) {
    double eta = beta[0];
    for (size_t j = 0; j < cols.size(); ++j)
      eta += beta[j + 1] * static_cast<double>(s.active_configs[node][g][cols[j]]);
    double mu = expit(eta);
    m->cpt[g * 2 + 0] = 1.0 - mu;
    m->cpt[g * 2 + 1] = mu;
    clamp_row(&m->cpt[g * 2], 2, opts.p_min);
  }
  m->marginal_mean = stochastic_mean(data, node);
  return m;
}

}  // namespace

FactorizedLikelihood fit_initial(const Dataset& data, const ModelSpec& spec,
                                 const FitOptions& opts) {
  if (data.rows.empty()) throw std::invalid_argument("fit_initial: empty dataset");
  FactorizedLikelihood lik;
  lik.schema = data.schema;
  lik.p_min = opts.p_min;
  lik.models.resize(data.schema->nodes.size());
  for (int i = 0; i < data.schema->n_nodes(); ++i) {
    const Node& nd = data.schema->nodes[i];
    FitModel fm = spec.default_model;
    auto it = spec.per_node.find(nd.name);
    if (it != spec.per_node.end()) fm = it->second;
    if (nd.kind == NodeKind::baseline) fm = FitModel::saturated;
    lik.models[i] = (fm == FitModel::saturated) ? fit_saturated(data, i, opts.p_min)
                                                : fit_logistic(data, i, opts);
  }
  return lik;
}

double conditional_prob(const FactorizedLikelihood& lik, int node, int value,
                        const int8_t* parent_values) {
  const Schema& s = *lik.schema;
  DegeneracyState st;
  for (int j = 0; j < node; ++j) {
    int8_t fv;
    if (st.forced(s.nodes[j], &fv)) {
      if (parent_values[j] != fv) throw std::invalid_argument("conditional_prob: invalid history");
    }
    st.step(s.nodes[j], parent_values[j]);
  }
  int8_t fv;
  if (st.forced(s.nodes[node], &fv)) return value == fv ? 1.0 : 0.0;
  if (value < 0 || value >= s.nodes[node].n_levels) return 0.0;
  uint64_t code = s.pack_prefix(parent_values, node);
  auto it = s.active_index[node].find(code);
  if (it == s.active_index[node].end())
    throw std::invalid_argument("conditional_prob: unreachable parent config");
  return lik.prob(node, it->second, value);
}

FactorizedLikelihood misspecify(const FactorizedLikelihood& lik,
                                const std::vector<std::string>& nodes, double bias,
                                std::pair<double, double> bounds) {
  FactorizedLikelihood out = lik;
  for (const std::string& name : nodes) {
    int i = lik.schema->node_index(name);
    if (i < 0) throw std::invalid_argument("misspecify: unknown node " + name);
    const Node& nd = lik.schema->nodes[i];
    if (nd.n_levels != 2)
      throw std::invalid_argument("misspecify: node " + name + " is not binary");
    double mean = lik.models[i]->marginal_mean;
    if (mean < 0.0)
      throw std::invalid_argument("misspecify: no fitted marginal mean for " + name);
    double p1 = std::min(std::max(mean + bias, bounds.first), bounds.second);
    auto m = std::make_shared<NodeModel>();
    m->kind = ModelKind::constant;
    m->marginal_mean = mean;
    size_t n_cfg = lik.schema->active_codes[i].size();
    m->cpt.assign(n_cfg * 2, 0.0);
    for (size_t g = 0; g < n_cfg; ++g) {
      m->cpt[g * 2 + 0] = 1.0 - p1;
      m->cpt[g * 2 + 1] = p1;
      clamp_row(&m->cpt[g * 2], 2, lik.p_min);
    }
    out.models[i] = std::move(m);
  }
  return out;
}

FactorizedLikelihood apply_fluctuation(const FactorizedLikelihood& lik,
                                       const FluctuationLayer& layer) {
  if (layer.node < 0 || layer.node >= lik.schema->n_nodes())
    throw std::invalid_argument("apply_fluctuation: bad node");
  if (layer.directions.size() != layer.epsilons.size())
    throw std::invalid_argument("apply_fluctuation: direction/epsilon mismatch");
  const Node& nd = lik.schema->nodes[layer.node];
  if (!nd.fluctuable())
    throw std::invalid_argument("apply_fluctuation: node " + nd.name + " is not fluctuable");
  const NodeModel& base = *lik.models[layer.node];
  int L = nd.n_levels;
  size_t n_cfg = lik.schema->active_codes[layer.node].size();

  auto m = std::make_shared<NodeModel>();
  m->kind = ModelKind::perturbed;
  m->marginal_mean = base.marginal_mean;
  m->cpt.assign(n_cfg * L, 0.0);
  for (size_t e = 0; e < layer.directions.size(); ++e)
    if (layer.directions[e].size() != n_cfg * static_cast<size_t>(L))
      throw std::invalid_argument("apply_fluctuation: direction has wrong length");

  for (size_t g = 0; g < n_cfg; ++g) {
    double sum = 0.0;
    for (int v = 0; v < L; ++v) {
      double mult = 1.0;
      for (size_t e = 0; e < layer.epsilons.size(); ++e)
        mult += layer.epsilons[e] * layer.directions[e][g * L + v];
      if (mult < 0.0)
        throw std::domain_error("apply_fluctuation: negative multiplier at node " + nd.name);
      m->cpt[g * L + v] = mult * base.cpt[g * L + v];
      sum += m->cpt[g * L + v];
    }
    if (std::fabs(sum - 1.0) > 1e-10)
      throw std::domain_error("apply_fluctuation: row normalization drift at node " + nd.name);
    for (int v = 0; v < L; ++v) m->cpt[g * L + v] /= sum;
    clamp_row(&m->cpt[g * L], L, lik.p_min);
  }

  FactorizedLikelihood out = lik;
  out.models[layer.node] = std::move(m);
  return out;
}

double log_likelihood(const FactorizedLikelihood& lik, const Dataset& data) {
  if (data.rows.empty()) throw std::invalid_argument("log_likelihood: empty dataset");
  const Schema& s = *lik.schema;
  double total = 0.0;
  for (size_t c = 0; c < s.classes.size(); ++c) {
    if (data.class_count[c] == 0) continue;
    double ll = 0.0;
    for (int i = 0; i < s.n_nodes(); ++i) {
      const ClassNode& cn = s.at(static_cast<int32_t>(c), i);
      if (!cn.stochastic) continue;  // forced values contribute log(1)
      double p = lik.prob(i, cn.pa_idx, cn.value);
      if (p <= 0.0)
        throw std::domain_error("log_likelihood: zero probability at node " + s.names[i]);
      ll += std::log(p);
    }
    total += data.class_weight[c] * ll;
  }
  return total;
}

FactorizedLikelihood likelihood_from_logistic(std::shared_ptr<const Schema> schema,
                                              const std::vector<LogisticSpec>& specs,
                                              double p_min) {
  if (specs.size() != schema->nodes.size())
    throw std::invalid_argument("likelihood_from_logistic: one spec per node required");
  FactorizedLikelihood lik;
  lik.schema = schema;
  lik.p_min = p_min;
  lik.models.resize(schema->nodes.size());
  for (int i = 0; i < schema->n_nodes(); ++i) {
    const Node& nd = schema->nodes[i];
    if (nd.n_levels != 2)
      throw std::invalid_argument("likelihood_from_logistic: node " + nd.name + " not binary");
    auto m = std::make_shared<NodeModel>();
    m->kind = ModelKind::logistic;
    m->coef.push_back(specs[i].intercept);
    for (const LogisticTerm& t : specs[i].terms) {
      if (t.parent < 0 || t.parent >= i)
        throw std::invalid_argument("likelihood_from_logistic: bad parent index at " + nd.name);
      m->coef.push_back(t.coef);
      m->coef_parents.push_back(t.parent);
    }
    size_t n_cfg = schema->active_codes[i].size();
    m->cpt.assign(n_cfg * 2, 0.0);
    for (size_t g = 0; g < n_cfg; ++g) {
      double eta = specs[i].intercept;
      for (const LogisticTerm& t : specs[i].terms)
        eta += t.coef * static_cast<double>(schema->active_configs[i][g][t.parent]);
      double mu = expit(eta);
      m->cpt[g * 2 + 0] = 1.0 - mu;
      m->cpt[g * 2 + 1] = mu;
      clamp_row(&m->cpt[g * 2], 2, p_min);
    }
    lik.models[i] = std::move(m);
  }
  return lik;
}

std::string likelihood_to_json(const FactorizedLikelihood& lik) {
  nlohmann::json j;
  j["p_min"] = lik.p_min;
  j["nodes"] = nlohmann::json::array();
  for (int i = 0; i < lik.schema->n_nodes(); ++i) {
    const NodeModel& m = *lik.models[i];
    nlohmann::json n;
    n["name"] = lik.schema->names[i];
    switch (m.kind) {
      case ModelKind::logistic: n["model"] = "logistic"; break;
      case ModelKind::saturated: n["model"] = "saturated"; break;
      case ModelKind::constant: n["model"] = "constant"; break;
      case ModelKind::table: n["model"] = "table"; break;
      case ModelKind::perturbed: n["model"] = "perturbed"; break;
    }
    n["cpt"] = m.cpt;
    if (!m.coef.empty()) {
      n["coef"] = m.coef;
      n["coef_parents"] = m.coef_parents;
    }
    if (m.marginal_mean >= 0.0) n["marginal_mean"] = m.marginal_mean;
    j["nodes"].push_back(std::move(n));
  }
  return j.dump();
}

FactorizedLikelihood likelihood_from_json(std::shared_ptr<const Schema> schema,
                                          const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  FactorizedLikelihood lik;
  lik.schema = schema;
  lik.p_min = j.value("p_min", 1e-6);
  const auto& nodes = j.at("nodes");
  if (nodes.size() != schema->nodes.size())
    throw std::invalid_argument("likelihood json: node count mismatch");
  lik.models.resize(schema->nodes.size());
  for (int i = 0; i < schema->n_nodes(); ++i) {
    const auto& n = nodes[i];
    if (n.at("name").get<std::string>() != schema->names[i])
      throw std::invalid_argument("likelihood json: node order mismatch at " + schema->names[i]);
    auto m = std::make_shared<NodeModel>();
    std::string kind = n.at("model").get<std::string>();
    if (kind == "logistic") m->kind = ModelKind::logistic;
    else if (kind == "saturated") m->kind = ModelKind::saturated;
    else if (kind == "constant") m->kind = ModelKind::constant;
    else if (kind == "perturbed") m->kind = ModelKind::perturbed;
    else m->kind = ModelKind::table;
    m->cpt = n.at("cpt").get<std::vector<double>>();
    size_t want = lik.schema->active_codes[i].size() *
                  static_cast<size_t>(schema->nodes[i].n_levels);
    if (m->cpt.size() != want)
      throw std::invalid_argument("likelihood json: cpt length mismatch at " + schema->names[i]);
    int L = schema->nodes[i].n_levels;
    for (size_t g = 0; g * L < m->cpt.size(); ++g) {
      double sum = 0.0;
      for (int v = 0; v < L; ++v) sum += m->cpt[g * L + v];
      if (std::fabs(sum - 1.0) > 1e-8)
        throw std::invalid_argument("likelihood json: unnormalized row at " + schema->names[i]);
    }
    if (n.contains("coef")) m->coef = n["coef"].get<std::vector<double>>();
    if (n.contains("coef_parents")) m->coef_parents = n["coef_parents"].get<std::vector<int>>();
    if (n.contains("marginal_mean")) m->marginal_mean = n["marginal_mean"].get<double>();
    lik.models[i] = std::move(m);
  }
  return lik;
}

Trajectory sample_trajectory(const FactorizedLikelihood& lik, Rng& rng) {
  const Schema& s = *lik.schema;
  Trajectory tr(s.nodes.size(), kBlank);
  DegeneracyState st;
  for (int i = 0; i < s.n_nodes(); ++i) {
    const Node& nd = s.nodes[i];
    int8_t fv;
    if (st.forced(nd, &fv)) {
      tr[i] = fv;
    } else {
      uint64_t code = s.pack_prefix(tr.data(), i);
      int32_t g = s.active_index[i].at(code);
      tr[i] = static_cast<int8_t>(
          rng.categorical(&lik.models[i]->cpt[static_cast<size_t>(g) * nd.n_levels],
                          nd.n_levels));
    }
    st.step(nd, tr[i]);
  }
  return tr;
}

Dataset sample_dataset(const FactorizedLikelihood& lik, size_t n, Rng& rng) {
  std::vector<Trajectory> rows;
  rows.reserve(n);
  for (size_t i = 0; i < n; ++i) rows.push_back(sample_trajectory(lik, rng));
  return make_dataset(lik.schema, std::move(rows));
}

}  // namespace medt
