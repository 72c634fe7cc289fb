#include "medt/haleic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

namespace medt {

namespace {

struct Candidate {
  std::vector<int32_t> pos;
  std::vector<int8_t> thr;
  double support = 0.0;
  std::vector<uint64_t> mask;
};

bool canonical_less(const Candidate& a, const Candidate& b) {
  if (a.pos.size() != b.pos.size()) return a.pos.size() < b.pos.size();
  if (a.pos != b.pos) return a.pos < b.pos;
  return a.thr < b.thr;
}

struct MaskHash {
  size_t operator()(const std::vector<uint64_t>& m) const {
    size_t h = 1469598103934665603ull;
    for (uint64_t w : m) {
      h ^= w;
      h *= 1099511628211ull;
    }
    return h;
  }
};

// Depth-first walk over parent positions; each call registers the section
// defined by the (pos, thr) pairs accumulated so far, then extends it with
// every later position and observed threshold compatible with it.
void enumerate_sections(const std::vector<const std::vector<int8_t>*>& obs_cfg,
                        const std::vector<double>& obs_w, const std::vector<int32_t>& compat,
                        int start, int width, std::vector<int32_t>* pos, std::vector<int8_t>* thr,
                        std::vector<Candidate>* out) {
  Candidate c;
  c.pos = *pos;
  c.thr = *thr;
  for (int32_t i : compat) c.support += obs_w[i];
  out->push_back(std::move(c));
  if (out->size() > 500000)
    throw std::runtime_error("hal basis: too many candidate knots; reduce the parent space");
  for (int p = start; p < width; ++p) {
    std::vector<int8_t> vals;
    for (int32_t i : compat) {
      const int8_t v = (*obs_cfg[i])[p];
      if (v >= 1) vals.push_back(v);
    }
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (int8_t v : vals) {
      std::vector<int32_t> sub;
      for (int32_t i : compat)
        if ((*obs_cfg[i])[p] >= v) sub.push_back(i);
      pos->push_back(p);
      thr->push_back(v);
      enumerate_sections(obs_cfg, obs_w, sub, p + 1, width, pos, thr, out);
      pos->pop_back();
      thr->pop_back();
    }
  }
}

}  // namespace

HalBasis build_hal_basis(const Schema& schema, int node, const Dataset& resample, int knot_cap) {
  if (node < 0 || node >= static_cast<int>(schema.nodes.size()) ||
      !schema.nodes[node].fluctuable())
    throw std::invalid_argument("build_hal_basis: node has no fitted factor");
  HalBasis basis;
  basis.node = node;
  const auto& cfgs = schema.active_configs[node];
  basis.config_knots.assign(cfgs.size(), {});

  const size_t n_nodes = schema.nodes.size();
  std::vector<double> cfg_w(cfgs.size(), 0.0);
  std::vector<char> xseen(schema.nodes[node].n_levels, 0);
  for (size_t c = 0; c < schema.classes.size(); ++c) {
    if (resample.class_count[c] == 0) continue;
    const ClassNode& cn = schema.class_nodes[c * n_nodes + node];
    if (!cn.stochastic) continue;
    cfg_w[cn.pa_idx] += static_cast<double>(resample.class_count[c]);
    xseen[cn.value] = 1;
  }
  std::vector<int8_t> xthrs;
  for (int t = 1; t < schema.nodes[node].n_levels; ++t)
    if (xseen[t]) xthrs.push_back(static_cast<int8_t>(t));
  if (xthrs.empty()) return basis;

  std::vector<const std::vector<int8_t>*> obs_cfg;
  std::vector<double> obs_w;
  std::vector<int32_t> compat;
  for (size_t g = 0; g < cfgs.size(); ++g) {
    if (cfg_w[g] <= 0.0) continue;
    compat.push_back(static_cast<int32_t>(obs_cfg.size()));
    obs_cfg.push_back(&cfgs[g]);
    obs_w.push_back(cfg_w[g]);
  }
  if (obs_cfg.empty()) return basis;

  std::vector<Candidate> cands;
  std::vector<int32_t> pos;
  std::vector<int8_t> thr;
  enumerate_sections(obs_cfg, obs_w, compat, 0, node, &pos, &thr, &cands);
  std::sort(cands.begin(), cands.end(), canonical_less);

  // Sections indistinguishable on the reachable parent space collapse to the
  // canonical-first representative; survivors rank by observed support.
  const size_t words = (cfgs.size() + 63) / 64;
  std::unordered_map<std::vector<uint64_t>, char, MaskHash> seen;
  std::vector<Candidate> kept;
  for (Candidate& c : cands) {
    c.mask.assign(words, 0);
    for (size_t g = 0; g < cfgs.size(); ++g) {
      bool inside = true;
      for (size_t i = 0; i < c.pos.size() && inside; ++i)
        if (cfgs[g][c.pos[i]] < c.thr[i]) inside = false;
      if (inside) c.mask[g >> 6] |= uint64_t(1) << (g & 63);
    }
    if (seen.emplace(c.mask, 1).second) kept.push_back(std::move(c));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& b) { return a.support > b.support; });

  for (const Candidate& c : kept) {
    if (static_cast<int>(basis.knots.size()) >= knot_cap) break;
    for (int8_t t : xthrs) {
      if (static_cast<int>(basis.knots.size()) >= knot_cap) break;
      HalKnot k;
      k.xthr = t;
      k.pos = c.pos;
      k.thr = c.thr;
      k.support = c.support;
      const int32_t id = static_cast<int32_t>(basis.knots.size());
      for (size_t g = 0; g < cfgs.size(); ++g)
        if ((c.mask[g >> 6] >> (g & 63)) & 1) basis.config_knots[g].push_back(id);
      basis.knots.push_back(std::move(k));
    }
  }
  return basis;
}

HalGradients hal_gradients(const FactorizedLikelihood& lik, const OutcomeSpec& outcome,
                           const RoleArms& arms) {
  const Schema& sc = *lik.schema;
  const size_t n_nodes = sc.nodes.size();
  const size_t n_classes = sc.classes.size();
  HalGradients out;
  out.lr.assign(n_classes, 0.0);
  out.z.assign(n_classes, 0.0);
  for (size_t c = 0; c < n_classes; ++c) {
    const ClassNode* cn = sc.class_nodes.data() + c * n_nodes;
    const double pv = cn[outcome.node].value == outcome.level ? 1.0 : 0.0;
    bool ok_lr = true, ok_z = true;
    double den_lr = 1.0, den_z = 1.0, ratio_lr = 1.0, ratio_z = 1.0;
    uint64_t code_lr = 0, code_z = 0;
    for (size_t j = 0; j < n_nodes && (ok_lr || ok_z); ++j) {
      const Node& nj = sc.nodes[j];
      const int8_t v = cn[j].value;
      if (nj.is_treatment_block()) {
        // A blank treatment value only occurs after absorption; the factor is
        // degenerate there and drops out of both the indicator and density.
        if (v != kBlank) {
          if (v == arms.lr[j])
            den_lr *= lik.prob(static_cast<int>(j), cn[j].pa_idx, v);
          else
            ok_lr = false;
          if (v == arms.z[j])
            den_z *= lik.prob(static_cast<int>(j), cn[j].pa_idx, v);
          else
            ok_z = false;
        }
      } else if (cn[j].stochastic) {
        if (nj.kind == NodeKind::mediatorZ) {
          if (ok_lr) {
            const int32_t gi = sc.active_index[j].at(code_z);
            ratio_lr *= lik.prob(static_cast<int>(j), gi, v) /
                        lik.prob(static_cast<int>(j), cn[j].pa_idx, v);
          }
        } else if (ok_z) {
          const int32_t gi = sc.active_index[j].at(code_lr);
          ratio_z *= lik.prob(static_cast<int>(j), gi, v) /
                     lik.prob(static_cast<int>(j), cn[j].pa_idx, v);
        }
      }
      const int8_t vlr = nj.is_treatment_block() ? arms.lr[j] : v;
      const int8_t vz = nj.is_treatment_block() ? arms.z[j] : v;
      code_lr += static_cast<uint64_t>(static_cast<int>(vlr) + 1) * sc.pack_mult[j];
      code_z += static_cast<uint64_t>(static_cast<int>(vz) + 1) * sc.pack_mult[j];
    }
    out.lr[c] = ok_lr ? pv / den_lr * ratio_lr : 0.0;
    out.z[c] = ok_z ? pv / den_z * ratio_z : 0.0;
  }
  return out;
}

HalProjection fit_hal_eic(const FactorizedLikelihood& lik, const TargetSpec& spec, Rng& rng,
                          const HalOptions& opts) {
  if (opts.resample_n == 0) throw std::invalid_argument("fit_hal_eic: resample_n must be set");
  const Schema& sc = *lik.schema;
  const size_t n_nodes = sc.nodes.size();
  const size_t n_classes = sc.classes.size();
  const int folds = std::max(2, opts.n_folds);

  Dataset resample = sample_dataset(lik, opts.resample_n, rng);

  HalProjection proj;
  proj.schema = lik.schema;
  proj.spec = spec;
  proj.keys = expand_targets(spec);
  for (const TargetKey& k : proj.keys) proj.labels.push_back(target_label(sc, spec, k));
  proj.bases.resize(n_nodes);
  const size_t n_targets = proj.keys.size();
  proj.beta.assign(n_targets, std::vector<std::vector<double>>(n_nodes));
  proj.bound.assign(n_targets, std::vector<double>(n_nodes, 0.0));
  proj.cv_risk.assign(n_targets, std::vector<double>(n_nodes, 0.0));

  std::vector<std::vector<int64_t>> cls_fold(n_classes, std::vector<int64_t>(folds, 0));
  for (size_t i = 0; i < resample.rows.size(); ++i)
    cls_fold[resample.row_class[i]][i % folds]++;

  std::vector<HalGradients> grads;
  grads.reserve(n_targets);
  for (const TargetKey& k : proj.keys)
    grads.push_back(
        hal_gradients(lik, spec.outcomes[k.outcome], arms_for_role(spec.pair, k.role)));

  LassoOptions lo = opts.lasso;
  lo.max_nonzero = opts.resample_n > 1 ? opts.resample_n - 1 : 1;

  for (size_t x = 0; x < n_nodes; ++x) {
    if (!sc.nodes[x].fluctuable()) continue;
    proj.bases[x] = build_hal_basis(sc, static_cast<int>(x), resample, opts.knot_cap);
    const HalBasis& basis = proj.bases[x];
    const size_t n_knots = basis.knots.size();
    for (size_t k = 0; k < n_targets; ++k) proj.beta[k][x].assign(n_knots, 0.0);
    if (n_knots == 0) continue;

    // Resample rows with equal class and fold are identical; one weighted row
    // per (class, fold) pair is the same regression.
    struct EffRow {
      int32_t cls;
      int32_t cfg;
      int8_t val;
      int fold;
      double w;
    };
    std::vector<EffRow> rows;
    for (size_t c = 0; c < n_classes; ++c) {
      const ClassNode& cn = sc.class_nodes[c * n_nodes + x];
      if (!cn.stochastic) continue;
      for (int f = 0; f < folds; ++f)
        if (cls_fold[c][f] > 0)
          rows.push_back({static_cast<int32_t>(c), cn.pa_idx, cn.value, f,
                          static_cast<double>(cls_fold[c][f])});
    }
    if (rows.empty()) continue;

    const int n_levels = sc.nodes[x].n_levels;
    const size_t n_cfg = sc.active_configs[x].size();
    std::vector<double> surv(n_cfg * n_levels, 0.0);
    for (size_t g = 0; g < n_cfg; ++g) {
      double s = 0.0;
      for (int v = n_levels - 1; v >= 0; --v) {
        s += lik.prob(static_cast<int>(x), static_cast<int32_t>(g), v);
        surv[g * n_levels + v] = s;
      }
    }

    LassoData d;
    d.rows = rows.size();
    d.cols = n_knots;
    d.x.assign(d.rows * d.cols, 0.0);
    d.y.resize(d.rows);
    d.w.resize(d.rows);
    std::vector<int> fold_id(d.rows);
    for (size_t i = 0; i < rows.size(); ++i) {
      d.w[i] = rows[i].w;
      fold_id[i] = rows[i].fold;
      for (int32_t j : basis.config_knots[rows[i].cfg]) {
        const int t = basis.knots[j].xthr;
        d.x[static_cast<size_t>(j) * d.rows + i] =
            (rows[i].val >= t ? 1.0 : 0.0) - surv[static_cast<size_t>(rows[i].cfg) * n_levels + t];
      }
    }

    for (size_t k = 0; k < n_targets; ++k) {
      const std::vector<double>& grad =
          sc.nodes[x].kind == NodeKind::mediatorZ ? grads[k].z : grads[k].lr;
      for (size_t i = 0; i < rows.size(); ++i) d.y[i] = grad[rows[i].cls];
      if (opts.bound_override >= 0.0) {
        LassoPath path = lasso_path(d, lo);
        proj.beta[k][x] = lasso_at_bound(d, path, opts.bound_override, lo);
        proj.bound[k][x] = opts.bound_override;
      } else {
        LassoCvChoice cv = lasso_cv(d, fold_id, folds, opts.n_bounds, lo);
        proj.beta[k][x] = cv.beta;
        proj.bound[k][x] = cv.best_bound;
        proj.cv_risk[k][x] = cv.best_risk;
      }
    }
  }
  return proj;
}

EICBundle HalProjection::rebuild(const FactorizedLikelihood& lik) const {
  const Schema& sc = *lik.schema;
  const size_t n_nodes = sc.nodes.size();
  const size_t n_classes = sc.classes.size();
  EICBundle bundle;
  bundle.keys = keys;
  bundle.labels = labels;
  bundle.targets.resize(keys.size());

  int first = 0;
  while (first < static_cast<int>(n_nodes) && sc.nodes[first].kind == NodeKind::baseline) ++first;

  for (size_t k = 0; k < keys.size(); ++k) {
    EicComponents& comp = bundle.targets[k];
    comp.key = keys[k];
    QEvaluator qe(lik, spec.outcomes[keys[k].outcome], arms_for_role(spec.pair, keys[k].role));
    comp.psi = qe.psi();
    comp.node_tables.resize(n_nodes);
    comp.node_pref.resize(n_nodes);
    comp.node_floored.resize(n_nodes);
    for (size_t x = 0; x < n_nodes; ++x) {
      if (bases[x].node < 0) continue;
      const int n_levels = sc.nodes[x].n_levels;
      const size_t n_cfg = sc.active_configs[x].size();
      auto& table = comp.node_tables[x];
      table.assign(n_cfg * n_levels, 0.0);
      comp.node_floored[x].assign(n_cfg, 0);
      const std::vector<double>& bx = beta[k][x];
      if (bx.empty()) continue;
      std::vector<double> mu(n_levels, 0.0);
      std::vector<double> surv(n_levels, 0.0);
      for (size_t g = 0; g < n_cfg; ++g) {
        std::fill(mu.begin(), mu.end(), 0.0);
        bool any = false;
        for (int32_t j : bases[x].config_knots[g]) {
          if (bx[j] == 0.0) continue;
          mu[bases[x].knots[j].xthr] += bx[j];
          any = true;
        }
        if (!any) continue;
        double acc = 0.0;
        for (int v = n_levels - 1; v >= 0; --v) {
          acc += lik.prob(static_cast<int>(x), static_cast<int32_t>(g), v);
          surv[v] = acc;
        }
        for (int v = 0; v < n_levels; ++v) {
          double val = 0.0;
          for (int t = 1; t < n_levels; ++t)
            if (mu[t] != 0.0) val += mu[t] * ((v >= t ? 1.0 : 0.0) - surv[t]);
          table[g * n_levels + v] = val;
        }
      }
    }

    comp.class_l0.resize(n_classes);
    comp.class_total.resize(n_classes);
    for (size_t c = 0; c < n_classes; ++c) {
      comp.class_l0[c] = qe.value_at(first, sc.classes[c].data()) - comp.psi;
      double total = comp.class_l0[c];
      const ClassNode* cn = sc.class_nodes.data() + c * n_nodes;
      for (size_t x = 0; x < n_nodes; ++x) {
        if (comp.node_tables[x].empty() || !cn[x].stochastic) continue;
        total += comp.node_tables[x][static_cast<size_t>(cn[x].pa_idx) * sc.nodes[x].n_levels +
                                     cn[x].value];
      }
      comp.class_total[c] = total;
    }
  }
  return bundle;
}

HalTmleResult haleic_tmle(const FactorizedLikelihood& init, const Dataset& data,
                          const TargetSpec& spec, Rng& rng, HalOptions opts) {
  if (opts.resample_n == 0) opts.resample_n = data.n();
  if (opts.tmle.mode != TmleMode::onestep)
    throw std::invalid_argument("haleic_tmle: only the one-step updater applies");
  HalTmleResult out;
  FactorizedLikelihood fit = init;
  const int passes = std::max(1, opts.beta_refits);
  for (int pass = 0; pass < passes; ++pass) {
    out.projection = fit_hal_eic(fit, spec, rng, opts);
    const HalProjection& proj = out.projection;
    if (pass == 0) out.initial_bundle = proj.rebuild(init);
    out.inner = onestep_path(
        fit, data, [&proj](const FactorizedLikelihood& l) { return proj.rebuild(l); }, opts.tmle);
    fit = out.inner.fit;
    out.refits = pass + 1;
    if (pass > 0 && out.inner.iterations == 0) break;
  }
  return out;
}

}  // namespace medt
