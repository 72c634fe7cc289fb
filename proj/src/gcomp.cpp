#include "medt/gcomp.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "medt/rng.hpp"

namespace medt {

const char* role_name(PairRole r) {
  switch (r) {
    case PairRole::aa: return "aa";
    case PairRole::aap: return "aap";
    case PairRole::apap: return "apap";
  }
  return "?";
}

PairRole role_from_name(const std::string& s) {
  if (s == "aa") return PairRole::aa;
  if (s == "aap") return PairRole::aap;
  if (s == "apap") return PairRole::apap;
  throw std::invalid_argument("unknown intervention role: " + s);
}

std::vector<TargetKey> expand_targets(const TargetSpec& spec) {
  std::vector<TargetKey> keys;
  for (int s = 0; s < static_cast<int>(spec.outcomes.size()); ++s)
    for (PairRole r : spec.roles) keys.push_back(TargetKey{s, r});
  return keys;
}

std::string target_label(const Schema& schema, const TargetSpec& spec, const TargetKey& key) {
  const OutcomeSpec& o = spec.outcomes[key.outcome];
  std::string base = schema.names[o.node];
  if (schema.nodes[o.node].n_levels != 2 || o.level != 1)
    base += "=" + std::to_string(o.level);
  return base + ":" + role_name(key.role);
}

std::string target_spec_to_json(const Schema& schema, const TargetSpec& spec) {
  nlohmann::json j;
  j["outcomes"] = nlohmann::json::array();
  for (const OutcomeSpec& o : spec.outcomes)
    j["outcomes"].push_back({{"node", schema.names[o.node]}, {"level", o.level}});
  nlohmann::json arm, arm_prime;
  for (size_t i = 0; i < schema.nodes.size(); ++i) {
    if (schema.nodes[i].kind != NodeKind::treatment) continue;
    arm[schema.names[i]] = spec.pair.arm_a[i];
    arm_prime[schema.names[i]] = spec.pair.arm_ap[i];
  }
  j["arm"] = arm;
  j["arm_prime"] = arm_prime;
  j["roles"] = nlohmann::json::array();
  for (PairRole r : spec.roles) j["roles"].push_back(role_name(r));
  return j.dump(2) + "\n";
}

TargetSpec target_spec_from_json(const Schema& schema, const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TargetSpec spec;
  auto node_index = [&schema](const std::string& name) {
    for (size_t i = 0; i < schema.names.size(); ++i)
      if (schema.names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("targets: unknown node " + name);
  };
  if (!j.contains("outcomes") || j["outcomes"].empty())
    throw std::invalid_argument("targets: at least one outcome is required");
  for (const auto& o : j["outcomes"]) {
    OutcomeSpec os;
    os.node = node_index(o.at("node").get<std::string>());
    os.level = o.value("level", 1);
    if (schema.nodes[os.node].kind != NodeKind::outcomeY)
      throw std::invalid_argument("targets: " + schema.names[os.node] + " is not an outcome");
    if (os.level < 0 || os.level >= schema.nodes[os.node].n_levels)
      throw std::invalid_argument("targets: outcome level out of range");
    spec.outcomes.push_back(os);
  }
  std::unordered_map<std::string, int> a, ap;
  for (const auto& [name, v] : j.at("arm").items()) a[name] = v.get<int>();
  for (const auto& [name, v] : j.at("arm_prime").items()) ap[name] = v.get<int>();
  spec.pair = build_intervention_pair(schema, a, ap);
  if (j.contains("roles")) {
    spec.roles.clear();
    for (const auto& r : j["roles"]) spec.roles.push_back(role_from_name(r.get<std::string>()));
    if (spec.roles.empty()) throw std::invalid_argument("targets: empty role list");
  }
  return spec;
}

RoleArms arms_for_role(const InterventionPair& pair, PairRole role) {
  switch (role) {
    case PairRole::aa: return {pair.arm_a.data(), pair.arm_a.data()};
    case PairRole::aap: return {pair.arm_a.data(), pair.arm_ap.data()};
    case PairRole::apap: return {pair.arm_ap.data(), pair.arm_ap.data()};
  }
  return {nullptr, nullptr};
}

QEvaluator::QEvaluator(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                       const RoleArms& arms)
    : lik_(lik), schema_(*lik.schema), outcome_(outcome), arms_(arms) {
  if (outcome_.node < 0 || outcome_.node >= schema_.n_nodes() ||
      schema_.nodes[outcome_.node].is_treatment_block())
    throw std::invalid_argument("outcome must be a non-treatment node");
  cur_.assign(schema_.nodes.size(), kBlank);
  memo_.resize(schema_.nodes.size() + 1);
}

uint64_t QEvaluator::parent_code(int node) const {
  // Treatment coordinates come from the arm that conditions this node's
  // factor; everything else from the current history values.
  const int8_t* arm =
      (schema_.nodes[node].kind == NodeKind::mediatorZ) ? arms_.z : arms_.lr;
  uint64_t code = 0;
  for (int j = 0; j < node; ++j) {
    int8_t v = schema_.nodes[j].is_treatment_block() ? arm[j] : cur_[j];
    code += static_cast<uint64_t>(v + 1) * schema_.pack_mult[j];
  }
  return code;
}

double QEvaluator::recurse(int i, DegeneracyState st, uint64_t key) {
  if (i == schema_.n_nodes())
    return cur_[outcome_.node] == outcome_.level ? 1.0 : 0.0;
  const Node& nd = schema_.nodes[i];

  if (nd.is_treatment_block()) {
    // Imputed treatment; forced uncensored, so the state never trips here.
    return recurse(i + 1, st, key);
  }

  int8_t fv;
  if (st.forced(nd, &fv)) {
    cur_[i] = fv;
    DegeneracyState nx = st;
    nx.step(nd, fv);
    double v = recurse(i + 1, nx, key + static_cast<uint64_t>(fv + 1) * schema_.nona_mult[i]);
    cur_[i] = kBlank;
    return v;
  }

  auto& memo = memo_[i];
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;

  uint64_t code = parent_code(i);
  auto gi = schema_.active_index[i].find(code);
  if (gi == schema_.active_index[i].end())
    throw std::logic_error("gcomp: unreachable parent config at " + nd.name);
  const double* p = &lik_.models[i]->cpt[static_cast<size_t>(gi->second) * nd.n_levels];

  double total = 0.0;
  for (int v = 0; v < nd.n_levels; ++v) {
    if (p[v] == 0.0) continue;
    cur_[i] = static_cast<int8_t>(v);
    DegeneracyState nx = st;
    nx.step(nd, static_cast<int8_t>(v));
    total += p[v] * recurse(i + 1, nx, key + static_cast<uint64_t>(v + 1) * schema_.nona_mult[i]);
  }
  cur_[i] = kBlank;
  memo.emplace(key, total);
  return total;
}

double QEvaluator::psi() { return recurse(0, DegeneracyState{}, 0); }

double QEvaluator::value_at(int node, const int8_t* values) {
  DegeneracyState st;
  uint64_t key = 0;
  for (int j = 0; j < node; ++j) {
    const Node& nd = schema_.nodes[j];
    if (nd.is_treatment_block()) {
      // The counterfactual world is uncensored; treatments do not enter the
      // history key.
      continue;
    }
    cur_[j] = values[j];
    key += static_cast<uint64_t>(values[j] + 1) * schema_.nona_mult[j];
    int8_t fv;
    if (st.forced(nd, &fv) && values[j] != fv)
      throw std::invalid_argument("gcomp: history violates degeneracy at " + nd.name);
    st.step(nd, values[j]);
  }
  double v = recurse(node, st, key);
  for (int j = 0; j < node; ++j) cur_[j] = kBlank;
  return v;
}

double psi(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
           const InterventionPair& pair, PairRole role) {
  QEvaluator q(lik, outcome, arms_for_role(pair, role));
  return q.psi();
}

EffectDecomposition nie_nde(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                            const InterventionPair& pair) {
  EffectDecomposition d;
  d.psi_aa = psi(lik, outcome, pair, PairRole::aa);
  d.psi_aap = psi(lik, outcome, pair, PairRole::aap);
  d.psi_apap = psi(lik, outcome, pair, PairRole::apap);
  d.nie = d.psi_aa - d.psi_aap;
  d.nde = d.psi_aap - d.psi_apap;
  d.te = d.nie + d.nde;
  return d;
}

namespace {

// Explicit history-table construction for the oracle path.
struct Prefix {
  Trajectory values;  // only non-treatment entries are meaningful
  DegeneracyState st;
  uint64_t key = 0;
};

}  // namespace

double sequential_regression_psi(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                                 const InterventionPair& pair, PairRole role) {
  const Schema& s = *lik.schema;
  RoleArms arms = arms_for_role(pair, role);
  int n = s.n_nodes();

  // Forward pass: materialize the reachable histories before each node.
  std::vector<std::vector<Prefix>> hist(n + 1);
  Prefix root;
  root.values.assign(n, kBlank);
  hist[0].push_back(root);
  for (int i = 0; i < n; ++i) {
    const Node& nd = s.nodes[i];
    for (const Prefix& h : hist[i]) {
      if (nd.is_treatment_block()) {
        hist[i + 1].push_back(h);
        continue;
      }
      int8_t fv;
      if (h.st.forced(nd, &fv)) {
        Prefix nx = h;
        nx.values[i] = fv;
        nx.st.step(nd, fv);
        nx.key += static_cast<uint64_t>(fv + 1) * s.nona_mult[i];
        hist[i + 1].push_back(std::move(nx));
      } else {
        for (int v = 0; v < nd.n_levels; ++v) {
          Prefix nx = h;
          nx.values[i] = static_cast<int8_t>(v);
          nx.st.step(nd, static_cast<int8_t>(v));
          nx.key += static_cast<uint64_t>(v + 1) * s.nona_mult[i];
          hist[i + 1].push_back(std::move(nx));
        }
      }
    }
  }

  // Terminal values, then one conditional-expectation step per node walking
  // backward; treatment nodes pass the table through untouched.
  std::unordered_map<uint64_t, double> q;
  for (const Prefix& h : hist[n])
    q[h.key] = (h.values[outcome.node] == outcome.level) ? 1.0 : 0.0;

  for (int i = n - 1; i >= 0; --i) {
    const Node& nd = s.nodes[i];
    if (nd.is_treatment_block()) continue;
    const int8_t* arm = (nd.kind == NodeKind::mediatorZ) ? arms.z : arms.lr;
    std::unordered_map<uint64_t, double> qprev;
    for (const Prefix& h : hist[i]) {
      if (qprev.count(h.key)) continue;
      int8_t fv;
      double val = 0.0;
      if (h.st.forced(nd, &fv)) {
        val = q.at(h.key + static_cast<uint64_t>(fv + 1) * s.nona_mult[i]);
      } else {
        uint64_t code = 0;
        for (int j = 0; j < i; ++j) {
          int8_t v = s.nodes[j].is_treatment_block() ? arm[j] : h.values[j];
          code += static_cast<uint64_t>(v + 1) * s.pack_mult[j];
        }
        int32_t g = s.active_index[i].at(code);
        for (int v = 0; v < nd.n_levels; ++v)
          val += lik.prob(i, g, v) * q.at(h.key + static_cast<uint64_t>(v + 1) * s.nona_mult[i]);
      }
      qprev.emplace(h.key, val);
    }
    q = std::move(qprev);
  }
  return q.at(0);
}

McResult counterfactual_mc(const FactorizedLikelihood& lik,
                           const std::vector<OutcomeSpec>& outcomes,
                           const InterventionPair& pair, PairRole role, size_t n_draws,
                           Rng& rng) {
  const Schema& s = *lik.schema;
  RoleArms arms = arms_for_role(pair, role);
  std::vector<double> sum(outcomes.size(), 0.0), sumsq(outcomes.size(), 0.0);
  Trajectory tr(s.nodes.size(), kBlank);
  for (size_t d = 0; d < n_draws; ++d) {
    DegeneracyState st;
    for (int i = 0; i < s.n_nodes(); ++i) {
      const Node& nd = s.nodes[i];
      if (nd.is_treatment_block()) {
        tr[i] = arms.lr[i];  // both arms force uncensored; value unused below
        continue;
      }
      int8_t fv;
      if (st.forced(nd, &fv)) {
        tr[i] = fv;
      } else {
        const int8_t* arm = (nd.kind == NodeKind::mediatorZ) ? arms.z : arms.lr;
        uint64_t code = 0;
        for (int j = 0; j < i; ++j) {
          int8_t v = s.nodes[j].is_treatment_block() ? arm[j] : tr[j];
          code += static_cast<uint64_t>(v + 1) * s.pack_mult[j];
        }
        int32_t g = s.active_index[i].at(code);
        tr[i] = static_cast<int8_t>(
            rng.categorical(&lik.models[i]->cpt[static_cast<size_t>(g) * nd.n_levels],
                            nd.n_levels));
      }
      st.step(nd, tr[i]);
    }
    for (size_t o = 0; o < outcomes.size(); ++o) {
      double y = (tr[outcomes[o].node] == outcomes[o].level) ? 1.0 : 0.0;
      sum[o] += y;
      sumsq[o] += y * y;
    }
  }
  McResult res;
  res.mean.resize(outcomes.size());
  res.se.resize(outcomes.size());
  for (size_t o = 0; o < outcomes.size(); ++o) {
    double m = sum[o] / static_cast<double>(n_draws);
    double var = sumsq[o] / static_cast<double>(n_draws) - m * m;
    res.mean[o] = m;
    res.se[o] = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_draws));
  }
  return res;
}

}  // namespace medt
