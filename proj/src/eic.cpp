#include "medt/eic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace medt {

namespace {

bool in_lr_block(NodeKind k) {
  return k == NodeKind::covariateR || k == NodeKind::covariateL || k == NodeKind::outcomeY;
}

// Shared core.  zlik supplies the mediator law (equal to lik for the natural
// targets); fluct_z drops the mediator components when that law is known.
EicComponents build_components(const FactorizedLikelihood& lik, const FactorizedLikelihood& zlik,
                               const OutcomeSpec& outcome, const RoleArms& arms, bool fluct_z,
                               TargetKey key) {
  const Schema& sc = *lik.schema;
  const size_t n_nodes = sc.nodes.size();
  QEvaluator qe(zlik, outcome, arms);

  EicComponents out;
  out.key = key;
  out.psi = qe.psi();
  out.node_tables.resize(n_nodes);
  out.node_pref.resize(n_nodes);
  out.node_floored.resize(n_nodes);

  const double cut = lik.p_min * (1.0 + 1e-9);
  std::vector<int8_t> scratch(n_nodes, kBlank);

  for (size_t x = 0; x < n_nodes; ++x) {
    const Node& nx = sc.nodes[x];
    if (!nx.fluctuable()) continue;
    const bool zcomp = nx.kind == NodeKind::mediatorZ;
    if (zcomp && !fluct_z) continue;

    const int L = nx.n_levels;
    const auto& cfgs = sc.active_configs[x];
    auto& table = out.node_tables[x];
    auto& pref_out = out.node_pref[x];
    auto& flo = out.node_floored[x];
    table.assign(cfgs.size() * L, 0.0);
    pref_out.assign(cfgs.size(), 0.0);
    flo.assign(cfgs.size(), 0);

    // Mediator components weight by covariate-density ratios and vice versa;
    // the denominator parents always coincide with the observed ones on the
    // treatment-consistent support.
    const int8_t* ind_arm = zcomp ? arms.z : arms.lr;
    const int8_t* num_arm = zcomp ? arms.lr : arms.z;
    const FactorizedLikelihood& num_lik = zcomp ? lik : zlik;

    for (size_t g = 0; g < cfgs.size(); ++g) {
      const std::vector<int8_t>& pa = cfgs[g];
      const int32_t* ppi = sc.prefix_pa_idx[x].data() + g * x;

      bool ok = true;
      for (size_t j = 0; j < x && ok; ++j)
        if (sc.nodes[j].is_treatment_block() && pa[j] != ind_arm[j]) ok = false;
      if (!ok) continue;

      double pref = 1.0;
      bool floored = false;
      uint64_t code_num = 0;
      for (size_t j = 0; j < x; ++j) {
        const Node& nj = sc.nodes[j];
        const bool is_a = nj.is_treatment_block();
        if (is_a) {
          double pd = lik.prob(static_cast<int>(j), ppi[j], pa[j]);
          if (pd <= cut) floored = true;
          pref /= pd;
        } else {
          const bool enters = zcomp ? in_lr_block(nj.kind) : nj.kind == NodeKind::mediatorZ;
          if (enters) {
            int32_t gi = sc.active_index[j].at(code_num);
            double num = num_lik.prob(static_cast<int>(j), gi, pa[j]);
            double den = lik.prob(static_cast<int>(j), ppi[j], pa[j]);
            if (den <= cut) floored = true;
            pref *= num / den;
          }
        }
        const int8_t v_num = is_a ? num_arm[j] : pa[j];
        code_num += (static_cast<uint64_t>(v_num) + 1) * sc.pack_mult[j];
      }

      std::copy(pa.begin(), pa.end(), scratch.begin());
      const double qx = qe.value_at(static_cast<int>(x), scratch.data());
      for (int v = 0; v < L; ++v) {
        scratch[x] = static_cast<int8_t>(v);
        const double qn = qe.value_at(static_cast<int>(x) + 1, scratch.data());
        table[g * L + v] = pref * (qn - qx);
      }
      scratch[x] = kBlank;
      pref_out[g] = pref;
      flo[g] = floored ? 1 : 0;
    }
  }

  int first = 0;
  while (first < static_cast<int>(n_nodes) && sc.nodes[first].kind == NodeKind::baseline) ++first;
  const size_t n_classes = sc.classes.size();
  out.class_l0.resize(n_classes);
  out.class_total.resize(n_classes);
  for (size_t c = 0; c < n_classes; ++c) {
    const Trajectory& tr = sc.classes[c];
    const double q0 = qe.value_at(first, tr.data());
    out.class_l0[c] = q0 - out.psi;
    double total = out.class_l0[c];
    const ClassNode* cn = sc.class_nodes.data() + c * n_nodes;
    for (size_t x = 0; x < n_nodes; ++x) {
      if (out.node_tables[x].empty() || !cn[x].stochastic) continue;
      total += out.node_tables[x][static_cast<size_t>(cn[x].pa_idx) * sc.nodes[x].n_levels +
                                  cn[x].value];
    }
    out.class_total[c] = total;
  }
  return out;
}

}  // namespace

EICBundle eic_components(const FactorizedLikelihood& lik, const TargetSpec& spec) {
  EICBundle b;
  b.keys = expand_targets(spec);
  b.targets.reserve(b.keys.size());
  for (const TargetKey& k : b.keys) {
    b.labels.push_back(target_label(*lik.schema, spec, k));
    RoleArms arms = arms_for_role(spec.pair, k.role);
    b.targets.push_back(build_components(lik, lik, spec.outcomes[k.outcome], arms, true, k));
  }
  return b;
}

EicComponents stochastic_intervention_eic(const FactorizedLikelihood& lik, const GammaSpec& gamma,
                                          const OutcomeSpec& outcome,
                                          const std::vector<int8_t>& arm) {
  const Schema& sc = *lik.schema;
  if (arm.size() != sc.nodes.size() || gamma.arm.size() != sc.nodes.size())
    throw std::invalid_argument("stochastic_intervention_eic: arm length mismatch");

  auto models = lik.models;
  for (const auto& [node, tab] : gamma.z_tables) {
    if (node < 0 || node >= static_cast<int>(sc.nodes.size()) ||
        sc.nodes[node].kind != NodeKind::mediatorZ)
      throw std::invalid_argument("stochastic_intervention_eic: table key is not a mediator node");
    if (tab.size() != sc.active_configs[node].size() * sc.nodes[node].n_levels)
      throw std::invalid_argument("stochastic_intervention_eic: table size mismatch at node " +
                                  sc.names[node]);
    auto m = std::make_shared<NodeModel>(*models[node]);
    m->kind = ModelKind::table;
    m->cpt = tab;
    models[node] = std::move(m);
  }
  for (size_t i = 0; i < sc.nodes.size(); ++i)
    if (sc.nodes[i].kind == NodeKind::mediatorZ && gamma.z_tables.count(static_cast<int>(i)) == 0)
      throw std::invalid_argument("stochastic_intervention_eic: missing mediator table for " +
                                  sc.names[i]);

  FactorizedLikelihood zlik = lik;
  zlik.models = std::move(models);
  RoleArms arms{arm.data(), gamma.arm.data()};
  return build_components(lik, zlik, outcome, arms, false, TargetKey{0, PairRole::aa});
}

EicReport empirical_score(const EicComponents& comp, const Schema& schema,
                          const std::string& label, const Dataset& data) {
  EicReport r;
  r.key = comp.key;
  r.label = label;
  r.psi = comp.psi;
  const size_t n_nodes = schema.nodes.size();
  r.pn_node.assign(n_nodes, 0.0);

  const double n = static_cast<double>(data.n());
  double m1 = 0.0, m2 = 0.0, l0 = 0.0;
  int64_t breach = 0;
  for (size_t c = 0; c < schema.classes.size(); ++c) {
    const int64_t cnt = data.class_count[c];
    if (cnt == 0) continue;
    const double w = data.class_weight[c];
    const double d = comp.class_total[c];
    m1 += w * d;
    m2 += w * d * d;
    l0 += w * comp.class_l0[c];
    const ClassNode* cn = schema.class_nodes.data() + c * n_nodes;
    bool hit = false;
    for (size_t x = 0; x < n_nodes; ++x) {
      if (comp.node_tables[x].empty() || !cn[x].stochastic) continue;
      r.pn_node[x] += w * comp.node_tables[x][static_cast<size_t>(cn[x].pa_idx) *
                                                  schema.nodes[x].n_levels +
                                              cn[x].value];
      if (comp.node_floored[x][cn[x].pa_idx]) hit = true;
    }
    if (hit) breach += cnt;
  }
  r.pn_total = m1;
  r.pn_l0 = l0;
  r.sd_total = std::sqrt(std::max(0.0, m2 - m1 * m1));
  r.breach_rows = breach;
  r.threshold = n >= 3.0 ? r.sd_total / (std::sqrt(n) * std::log(n)) : r.sd_total;
  return r;
}

std::vector<EicReport> empirical_scores(const EICBundle& bundle, const Dataset& data) {
  std::vector<EicReport> out;
  out.reserve(bundle.targets.size());
  for (size_t i = 0; i < bundle.targets.size(); ++i)
    out.push_back(empirical_score(bundle.targets[i], *data.schema, bundle.labels[i], data));
  return out;
}

RemainderReport exact_remainder(const FactorizedLikelihood& p, const FactorizedLikelihood& p0,
                                const OutcomeSpec& outcome, const InterventionPair& pair,
                                PairRole role) {
  const Schema& sc = *p.schema;
  if (p0.schema->nodes.size() != sc.nodes.size())
    throw std::invalid_argument("exact_remainder: likelihoods disagree on the schema");
  RoleArms arms = arms_for_role(pair, role);
  const TargetKey key{0, role};
  EicComponents cp = build_components(p, p, outcome, arms, true, key);
  EicComponents c0 = build_components(p0, p0, outcome, arms, true, key);

  RemainderReport r;
  r.psi_p = cp.psi;
  r.psi_p0 = c0.psi;

  const size_t n_nodes = sc.nodes.size();
  double p0d = 0.0, fact = 0.0;
  for (size_t c = 0; c < sc.classes.size(); ++c) {
    const ClassNode* cn = sc.class_nodes.data() + c * n_nodes;
    double w = 1.0;
    for (size_t i = 0; i < n_nodes; ++i)
      if (cn[i].stochastic) w *= p0.prob(static_cast<int>(i), cn[i].pa_idx, cn[i].value);
    p0d += w * cp.class_total[c];

    double s = 0.0;
    for (size_t x = 0; x < n_nodes; ++x) {
      if (cp.node_tables[x].empty() || !cn[x].stochastic) continue;
      const double prefp = cp.node_pref[x][cn[x].pa_idx];
      if (prefp == 0.0) continue;  // off the treatment-consistent support for both
      const double pref0 = c0.node_pref[x][cn[x].pa_idx];
      const double qd = cp.node_tables[x][static_cast<size_t>(cn[x].pa_idx) *
                                              sc.nodes[x].n_levels +
                                          cn[x].value] /
                        prefp;
      s += (prefp - pref0) * qd;
    }
    fact += w * s;
  }
  r.p0_d = p0d;
  r.direct = r.psi_p - r.psi_p0 + p0d;
  r.factorized = fact;
  return r;
}

}  // namespace medt
