#include "medt/tmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace medt {

const char* tmle_mode_name(TmleMode m) {
  return m == TmleMode::iterative ? "iterative" : "onestep";
}

TmleMode tmle_mode_from_name(const std::string& s) {
  if (s == "iterative") return TmleMode::iterative;
  if (s == "onestep" || s == "one-step") return TmleMode::onestep;
  throw std::invalid_argument("unknown updater: " + s);
}

namespace {

struct StopState {
  bool met = true;
  double max_abs = 0.0;
  double thr_at_max = 0.0;
};

StopState check_stop(const std::vector<EicReport>& reports) {
  StopState s;
  for (const EicReport& r : reports) {
    const double a = std::fabs(r.pn_total);
    if (a > r.threshold) s.met = false;
    if (a >= s.max_abs) {
      s.max_abs = a;
      s.thr_at_max = r.threshold;
    }
  }
  return s;
}

// Observed (config, level) counts per fluctuable node.
std::vector<std::vector<int64_t>> node_counts(const Dataset& data) {
  const Schema& sc = *data.schema;
  const size_t n_nodes = sc.nodes.size();
  std::vector<std::vector<int64_t>> w(n_nodes);
  for (size_t x = 0; x < n_nodes; ++x)
    if (sc.nodes[x].fluctuable())
      w[x].assign(sc.active_configs[x].size() * sc.nodes[x].n_levels, 0);
  for (size_t c = 0; c < sc.classes.size(); ++c) {
    if (data.class_count[c] == 0) continue;
    const ClassNode* cn = sc.class_nodes.data() + c * n_nodes;
    for (size_t x = 0; x < n_nodes; ++x) {
      if (w[x].empty() || !cn[x].stochastic) continue;
      w[x][static_cast<size_t>(cn[x].pa_idx) * sc.nodes[x].n_levels + cn[x].value] +=
          data.class_count[c];
    }
  }
  return w;
}

bool solve_sym(std::vector<double> a, std::vector<double> b, size_t k, std::vector<double>* out) {
  for (size_t col = 0; col < k; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < k; ++r)
      if (std::fabs(a[r * k + col]) > std::fabs(a[piv * k + col])) piv = r;
    if (std::fabs(a[piv * k + col]) < 1e-14) return false;
    if (piv != col) {
      for (size_t j = 0; j < k; ++j) std::swap(a[col * k + j], a[piv * k + j]);
      std::swap(b[col], b[piv]);
    }
    for (size_t r = col + 1; r < k; ++r) {
      const double f = a[r * k + col] / a[col * k + col];
      if (f == 0.0) continue;
      for (size_t j = col; j < k; ++j) a[r * k + j] -= f * a[col * k + j];
      b[r] -= f * b[col];
    }
  }
  out->assign(k, 0.0);
  for (size_t col = k; col-- > 0;) {
    double s = b[col];
    for (size_t j = col + 1; j < k; ++j) s -= a[col * k + j] * (*out)[j];
    (*out)[col] = s / a[col * k + col];
  }
  return true;
}

// Node-local MLE over (1 + eps . H) p; the line search stays feasible at
// every cell of the table, observed or not.
std::vector<double> solve_node_epsilon(const std::vector<const std::vector<double>*>& dirs,
                                       const std::vector<int64_t>& counts, double n, int max_iter,
                                       double tol, bool* boundary) {
  const size_t nk = dirs.size();
  const size_t cells = counts.size();
  std::vector<double> eps(nk, 0.0);
  *boundary = false;

  auto mult_at = [&](const std::vector<double>& e, size_t cell) {
    double m = 1.0;
    for (size_t k = 0; k < nk; ++k) m += e[k] * (*dirs[k])[cell];
    return m;
  };
  auto objective = [&](const std::vector<double>& e, bool* feas) {
    double obj = 0.0;
    *feas = true;
    for (size_t cell = 0; cell < cells; ++cell) {
      const double m = mult_at(e, cell);
      if (m <= 1e-10) {
        *feas = false;
        return 0.0;
      }
      if (counts[cell] != 0) obj += static_cast<double>(counts[cell]) / n * std::log(m);
    }
    return obj;
  };

  bool feas = true;
  double obj = 0.0;
  std::vector<double> grad(nk), hess(nk * nk), delta, cand(nk);
  for (int it = 0; it < max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (size_t cell = 0; cell < cells; ++cell) {
      if (counts[cell] == 0) continue;
      const double m = mult_at(eps, cell);
      const double w = static_cast<double>(counts[cell]) / n;
      for (size_t a = 0; a < nk; ++a) {
        const double ha = (*dirs[a])[cell];
        if (ha == 0.0) continue;
        grad[a] += w * ha / m;
        for (size_t b = a; b < nk; ++b) hess[a * nk + b] += w * ha * (*dirs[b])[cell] / (m * m);
      }
    }
    for (size_t a = 0; a < nk; ++a)
      for (size_t b = 0; b < a; ++b) hess[a * nk + b] = hess[b * nk + a];

    double gn = 0.0;
    for (double v : grad) gn = std::max(gn, std::fabs(v));
    if (gn <= tol) break;

    if (!solve_sym(hess, grad, nk, &delta)) {
      std::vector<double> ridm = hess;
      for (size_t a = 0; a < nk; ++a) ridm[a * nk + a] += 1e-8;
      if (!solve_sym(ridm, grad, nk, &delta)) delta = grad;
    }

    double lam = 1.0;
    bool improved = false;
    double new_obj = obj;
    while (lam > 1e-14) {
      for (size_t k = 0; k < nk; ++k) cand[k] = eps[k] + lam * delta[k];
      const double o = objective(cand, &feas);
      if (feas && o >= obj - 1e-15) {
        new_obj = o;
        eps = cand;
        improved = true;
        break;
      }
      lam *= 0.5;
    }
    if (!improved) {
      *boundary = true;
      break;
    }
    double step = 0.0;
    for (size_t k = 0; k < nk; ++k) step = std::max(step, std::fabs(lam * delta[k]));
    const double gain = new_obj - obj;
    obj = new_obj;
    if (step <= tol || (it > 0 && gain <= 1e-14)) break;
  }

  for (size_t cell = 0; cell < cells; ++cell)
    if (mult_at(eps, cell) <= 1e-8) *boundary = true;
  return eps;
}

void finalize(TMLEResult* res, const Dataset& data, const BundleBuilder& builder, bool stale) {
  if (stale) {
    res->bundle = builder(res->fit);
    res->scores = empirical_scores(res->bundle, data);
    const StopState st = check_stop(res->scores);
    if (st.met && !res->converged) {
      res->converged = true;
      res->stop_reason = "score within threshold";
    }
  }
  res->psi.clear();
  for (const EicComponents& t : res->bundle.targets) res->psi.push_back(t.psi);
}

}  // namespace

TMLEResult onestep_path(const FactorizedLikelihood& init, const Dataset& data,
                        const BundleBuilder& builder, const TMLEConfig& cfg) {
  TMLEResult res;
  res.fit = init;
  const size_t n_nodes = init.schema->nodes.size();
  double dx = cfg.dx;
  double ll = log_likelihood(res.fit, data);
  bool stale = true;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    res.bundle = builder(res.fit);
    res.scores = empirical_scores(res.bundle, data);
    stale = false;
    const StopState st = check_stop(res.scores);
    res.trace.push_back({iter, st.max_abs, st.thr_at_max, ll, dx});
    if (st.met) {
      res.converged = true;
      res.stop_reason = "score within threshold";
      break;
    }

    double norm2 = 0.0;
    for (const EicReport& r : res.scores)
      for (size_t x = 0; x < n_nodes; ++x) norm2 += r.pn_node[x] * r.pn_node[x];
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) {
      res.stop_reason = "component scores vanished before the stopping cut";
      break;
    }

    bool stepped = false;
    while (dx >= cfg.step_floor) {
      try {
        FactorizedLikelihood cand = res.fit;
        for (size_t x = 0; x < n_nodes; ++x) {
          FluctuationLayer layer;
          layer.node = static_cast<int>(x);
          for (size_t k = 0; k < res.bundle.targets.size(); ++k) {
            const std::vector<double>& tab = res.bundle.targets[k].node_tables[x];
            if (tab.empty()) continue;
            layer.directions.push_back(tab);
            layer.epsilons.push_back(res.scores[k].pn_node[x] * dx / norm);
          }
          if (layer.directions.empty()) continue;
          cand = apply_fluctuation(cand, layer);
        }
        const double ll_new = log_likelihood(cand, data);
        if (ll_new <= ll - 1e-12) {
          dx *= 0.5;
          continue;
        }
        res.fit = std::move(cand);
        ll = ll_new;
        stepped = true;
        break;
      } catch (const std::domain_error&) {
        dx *= 0.5;
      }
    }
    if (!stepped) {
      res.stop_reason = "step length underflow before the stopping cut";
      break;
    }
    res.iterations = iter + 1;
    stale = true;
  }
  if (res.iterations == cfg.max_iterations && !res.converged && res.stop_reason.empty())
    res.stop_reason = "maximum iterations reached";
  finalize(&res, data, builder, stale);
  return res;
}

TMLEResult onestep_tmle(const FactorizedLikelihood& init, const Dataset& data,
                        const TargetSpec& spec, const TMLEConfig& cfg) {
  return onestep_path(
      init, data, [&spec](const FactorizedLikelihood& lik) { return eic_components(lik, spec); },
      cfg);
}

TMLEResult iterative_tmle(const FactorizedLikelihood& init, const Dataset& data,
                          const TargetSpec& spec, const TMLEConfig& cfg) {
  TMLEResult res;
  res.fit = init;
  const Schema& sc = *init.schema;
  const size_t n_nodes = sc.nodes.size();
  const auto counts = node_counts(data);
  const double n = static_cast<double>(data.n());
  double prev_max = std::numeric_limits<double>::infinity();
  bool boundary_prev = false;
  bool stale = true;

  for (int pass = 0; pass < cfg.max_iterations; ++pass) {
    res.bundle = eic_components(res.fit, spec);
    res.scores = empirical_scores(res.bundle, data);
    stale = false;
    const StopState st = check_stop(res.scores);
    res.trace.push_back({pass, st.max_abs, st.thr_at_max, log_likelihood(res.fit, data), 0.0});
    if (st.met) {
      res.converged = true;
      res.stop_reason = "score within threshold";
      break;
    }
    if (boundary_prev && st.max_abs >= prev_max - 1e-14)
      throw std::runtime_error(
          "iterative update pinned a density multiplier at zero without improving the score; "
          "use the one-step updater");
    prev_max = st.max_abs;
    boundary_prev = false;

    for (size_t x = 0; x < n_nodes; ++x) {
      std::vector<const std::vector<double>*> dirs;
      std::vector<size_t> which;
      for (size_t k = 0; k < res.bundle.targets.size(); ++k) {
        const std::vector<double>& tab = res.bundle.targets[k].node_tables[x];
        if (tab.empty()) continue;
        dirs.push_back(&tab);
        which.push_back(k);
      }
      if (dirs.empty()) continue;

      bool boundary = false;
      std::vector<double> eps = solve_node_epsilon(dirs, counts[x], n, cfg.newton_max_iter,
                                                   cfg.newton_tol, &boundary);
      boundary_prev = boundary_prev || boundary;
      bool any = false;
      for (double e : eps) any = any || e != 0.0;
      if (!any) continue;

      FluctuationLayer layer;
      layer.node = static_cast<int>(x);
      for (size_t i = 0; i < dirs.size(); ++i) {
        layer.directions.push_back(*dirs[i]);
        layer.epsilons.push_back(eps[i]);
      }
      try {
        res.fit = apply_fluctuation(res.fit, layer);
      } catch (const std::domain_error& e) {
        throw std::runtime_error(std::string("iterative update rejected at node ") + sc.names[x] +
                                 " (" + e.what() + "); use the one-step updater");
      }
    }
    res.iterations = pass + 1;
    stale = true;
  }
  if (res.iterations == cfg.max_iterations && !res.converged && res.stop_reason.empty())
    res.stop_reason = "maximum iterations reached";
  finalize(
      &res, data, [&spec](const FactorizedLikelihood& lik) { return eic_components(lik, spec); },
      stale);
  return res;
}

TMLEResult run_tmle(const FactorizedLikelihood& init, const Dataset& data, const TargetSpec& spec,
                    const TMLEConfig& cfg) {
  return cfg.mode == TmleMode::iterative ? iterative_tmle(init, data, spec, cfg)
                                         : onestep_tmle(init, data, spec, cfg);
}

}  // namespace medt
