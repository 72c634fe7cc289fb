#include "medt/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "medt/eic.hpp"
#include "medt/rng.hpp"

namespace medt {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr int kL01 = 0, kL02 = 1, kAC1 = 2, kAE1 = 3, kR1 = 4, kZ1 = 5, kY1 = 6, kAC2 = 7,
              kAE2 = 8, kR2 = 9, kZ2 = 10, kY2 = 11;

}  // namespace

std::shared_ptr<const Schema> benchmark_schema() {
  std::vector<NodeSpec> specs(12);
  auto set = [&](int i, const char* name, int t, NodeKind kind) {
    specs[i].name = name;
    specs[i].t = t;
    specs[i].kind = kind;
  };
  set(kL01, "L01", 0, NodeKind::baseline);
  set(kL02, "L02", 0, NodeKind::baseline);
  set(kAC1, "AC1", 1, NodeKind::censoring);
  set(kAE1, "AE1", 1, NodeKind::treatment);
  set(kR1, "R1", 1, NodeKind::covariateR);
  set(kZ1, "Z1", 1, NodeKind::mediatorZ);
  set(kY1, "Y1", 1, NodeKind::outcomeY);
  set(kAC2, "AC2", 2, NodeKind::censoring);
  set(kAE2, "AE2", 2, NodeKind::treatment);
  set(kR2, "R2", 2, NodeKind::covariateR);
  set(kZ2, "Z2", 2, NodeKind::mediatorZ);
  set(kY2, "Y2", 2, NodeKind::outcomeY);
  specs[kY1].absorbing_levels = {1};
  specs[kY2].absorbing_levels = {1};
  specs[kAC1].censor_trigger_level = 0;
  specs[kAC2].censor_trigger_level = 0;
  return build_schema(specs);
}

FactorizedLikelihood benchmark_truth(std::shared_ptr<const Schema> schema, double lambda,
                                     double p_min) {
  std::vector<LogisticSpec> specs(12);
  auto lin = [&](int node, double intercept, std::vector<LogisticTerm> terms) {
    specs[node].intercept = intercept;
    specs[node].terms = std::move(terms);
  };
  lin(kL01, logit(0.4), {});
  lin(kL02, logit(0.6), {});
  lin(kAC1, 1.5, {{kL01, -0.4}, {kL02, -0.8}});
  lin(kAE1, lambda * -0.55, {{kL01, lambda * 0.35}, {kL02, lambda * 0.6}});
  lin(kR1, -0.8, {{kL01, 0.1}, {kL02, 0.3}, {kAE1, 1.0}});
  lin(kZ1, -0.25, {{kL02, 0.4}, {kAE1, 0.4}, {kR1, 0.5}});
  lin(kY1, 0.05, {{kL02, 0.375}, {kR1, 0.25}, {kAE1, -0.075}, {kZ1, -0.075}});
  lin(kAC2, 1.5, {{kL01, -0.4}, {kL02, -0.8}, {kAE1, 0.5}});
  lin(kAE2, lambda * -0.55,
      {{kL01, lambda * 0.35}, {kL02, lambda * 0.6}, {kAE1, lambda * -0.05}});
  lin(kR2, -0.8, {{kL01, 0.1}, {kR1, 0.3}, {kAE2, 1.0}});
  lin(kZ2, -0.25, {{kL02, 0.4}, {kAE2, 0.4}, {kR2, 0.5}});
  lin(kY2, 0.05, {{kL02, 0.375}, {kR2, 0.25}, {kAE2, -0.075}, {kZ2, -0.075}, {kR1, -0.025}});
  return likelihood_from_logistic(std::move(schema), specs, p_min);
}

TargetSpec benchmark_targets(std::shared_ptr<const Schema> schema) {
  TargetSpec spec;
  spec.outcomes = {{kY1, 1}, {kY2, 1}};
  spec.pair = build_intervention_pair(*schema, {{"AE1", 1}, {"AE2", 1}},
                                      {{"AE1", 0}, {"AE2", 0}});
  return spec;
}

std::string scenario_to_json(const ScenarioSpec& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["lambda"] = s.lambda;
  j["misspecified"] = s.misspecified;
  j["mis_bias"] = s.mis_bias;
  j["n"] = s.n;
  j["replicates"] = s.replicates;
  j["estimators"] = s.estimators;
  j["seed"] = s.seed;
  j["tmle"] = {{"mode", tmle_mode_name(s.tmle.mode)},
               {"max_iterations", s.tmle.max_iterations},
               {"dx", s.tmle.dx}};
  j["hal"] = {{"knot_cap", s.hal.knot_cap},
              {"n_folds", s.hal.n_folds},
              {"n_bounds", s.hal.n_bounds},
              {"resample_n", s.hal.resample_n},
              {"beta_refits", s.hal.beta_refits}};
  j["inference"] = {{"level", s.inference.level}, {"mc_draws", s.inference.mc_draws}};
  return j.dump(2) + "\n";
}

ScenarioSpec scenario_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ScenarioSpec s;
  s.name = j.value("name", s.name);
  s.lambda = j.value("lambda", s.lambda);
  s.misspecified = j.value("misspecified", s.misspecified);
  s.mis_bias = j.value("mis_bias", s.mis_bias);
  s.n = j.value("n", s.n);
  s.replicates = j.value("replicates", s.replicates);
  s.estimators = j.value("estimators", s.estimators);
  s.seed = j.value("seed", s.seed);
  if (j.contains("tmle")) {
    const auto& t = j["tmle"];
    s.tmle.mode = tmle_mode_from_name(t.value("mode", std::string(tmle_mode_name(s.tmle.mode))));
    s.tmle.max_iterations = t.value("max_iterations", s.tmle.max_iterations);
    s.tmle.dx = t.value("dx", s.tmle.dx);
  }
  if (j.contains("hal")) {
    const auto& h = j["hal"];
    s.hal.knot_cap = h.value("knot_cap", s.hal.knot_cap);
    s.hal.n_folds = h.value("n_folds", s.hal.n_folds);
    s.hal.n_bounds = h.value("n_bounds", s.hal.n_bounds);
    s.hal.resample_n = h.value("resample_n", s.hal.resample_n);
    s.hal.beta_refits = h.value("beta_refits", s.hal.beta_refits);
  }
  if (j.contains("inference")) {
    const auto& i = j["inference"];
    s.inference.level = i.value("level", s.inference.level);
    s.inference.mc_draws = i.value("mc_draws", s.inference.mc_draws);
  }
  return s;
}

TruthReport true_targets(const FactorizedLikelihood& truth, const TargetSpec& spec) {
  TruthReport report;
  for (const TargetKey& key : expand_targets(spec)) {
    report.labels.push_back(target_label(*truth.schema, spec, key));
    QEvaluator qe(truth, spec.outcomes[key.outcome], arms_for_role(spec.pair, key.role));
    report.value.push_back(qe.psi());
  }
  return report;
}

namespace {

struct EstimatorFlags {
  bool initial = false, tmle = false, hal_initial = false, hal_tmle = false;
};

EstimatorFlags parse_estimators(const std::vector<std::string>& names) {
  EstimatorFlags f;
  for (const std::string& e : names) {
    if (e == "initial")
      f.initial = true;
    else if (e == "tmle")
      f.tmle = true;
    else if (e == "hal_initial")
      f.hal_initial = true;
    else if (e == "hal_tmle")
      f.hal_tmle = true;
    else
      throw std::invalid_argument("unknown estimator: " + e);
  }
  return f;
}

ReplicateOut summarize(const char* name, int rep, const EICBundle& bundle, const Dataset& data,
                       Rng& mc_rng, const InferenceOptions& iopts, bool converged) {
  std::vector<double> est;
  std::vector<std::vector<double>> curves;
  for (const EicComponents& t : bundle.targets) {
    est.push_back(t.psi);
    curves.push_back(t.class_total);
  }
  CIResult ci = simultaneous_ci(bundle.labels, est, curves, data, mc_rng, iopts);
  ReplicateOut out;
  out.replicate = rep;
  out.estimator = name;
  out.psi = std::move(ci.estimate);
  out.se = std::move(ci.se);
  out.lo = std::move(ci.lo_pt);
  out.hi = std::move(ci.hi_pt);
  out.lo_sim = std::move(ci.lo_sim);
  out.hi_sim = std::move(ci.hi_sim);
  out.converged = converged;
  return out;
}

struct RepResult {
  std::vector<ReplicateOut> outs;
  std::vector<std::string> failed;  // estimator names that threw
};

RepResult run_replicate(const ScenarioSpec& sc, const FactorizedLikelihood& truth,
                        const TargetSpec& targets, const EstimatorFlags& flags, int rep) {
  const Rng base(sc.seed);
  Rng data_rng = base.fork(1, static_cast<uint64_t>(rep));
  Dataset data = sample_dataset(truth, sc.n, data_rng);

  FactorizedLikelihood fit0 = fit_initial(data, ModelSpec());
  if (!sc.misspecified.empty()) fit0 = misspecify(fit0, sc.misspecified, sc.mis_bias);

  Rng mc_rng = base.fork(2, static_cast<uint64_t>(rep));
  RepResult res;
  if (flags.initial) {
    try {
      EICBundle bundle = eic_components(fit0, targets);
      res.outs.push_back(summarize("initial", rep, bundle, data, mc_rng, sc.inference, true));
    } catch (const std::exception&) {
      res.failed.emplace_back("initial");
    }
  }
  if (flags.tmle) {
    try {
      TMLEResult r = run_tmle(fit0, data, targets, sc.tmle);
      res.outs.push_back(
          summarize("tmle", rep, r.bundle, data, mc_rng, sc.inference, r.converged));
    } catch (const std::exception&) {
      res.failed.emplace_back("tmle");
    }
  }
  if (flags.hal_initial || flags.hal_tmle) {
    Rng hal_rng = base.fork(3, static_cast<uint64_t>(rep));
    HalOptions hopts = sc.hal;
    hopts.tmle = sc.tmle;
    hopts.tmle.mode = TmleMode::onestep;
    if (hopts.resample_n == 0) hopts.resample_n = data.n();
    try {
      if (flags.hal_tmle) {
        HalTmleResult hr = haleic_tmle(fit0, data, targets, hal_rng, hopts);
        if (flags.hal_initial)
          res.outs.push_back(
              summarize("hal_initial", rep, hr.initial_bundle, data, mc_rng, sc.inference, true));
        res.outs.push_back(summarize("hal_tmle", rep, hr.inner.bundle, data, mc_rng, sc.inference,
                                     hr.inner.converged));
      } else {
        HalProjection proj = fit_hal_eic(fit0, targets, hal_rng, hopts);
        EICBundle bundle = proj.rebuild(fit0);
        res.outs.push_back(
            summarize("hal_initial", rep, bundle, data, mc_rng, sc.inference, true));
      }
    } catch (const std::exception&) {
      if (flags.hal_initial) res.failed.emplace_back("hal_initial");
      if (flags.hal_tmle) res.failed.emplace_back("hal_tmle");
    }
  }
  return res;
}

}  // namespace

StudyResult run_study(const ScenarioSpec& spec, int jobs) {
  if (spec.replicates < 0) throw std::invalid_argument("run_study: negative replicate count");
  if (spec.lambda < 1.0) throw std::invalid_argument("run_study: lambda must be at least 1");
  if (spec.n < 50) throw std::invalid_argument("run_study: n must be at least 50");
  const EstimatorFlags flags = parse_estimators(spec.estimators);

  StudyResult res;
  res.scenario = spec;
  auto schema = benchmark_schema();
  FactorizedLikelihood truth = benchmark_truth(schema, spec.lambda);
  TargetSpec targets = benchmark_targets(schema);
  res.truth = true_targets(truth, targets);
  res.labels = res.truth.labels;
  if (spec.replicates == 0) return res;

  std::vector<RepResult> per_rep(spec.replicates);
  const int workers = std::max(1, std::min(jobs, spec.replicates));
  if (workers == 1) {
    for (int rep = 0; rep < spec.replicates; ++rep)
      per_rep[rep] = run_replicate(spec, truth, targets, flags, rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (;;) {
            const int rep = next.fetch_add(1);
            if (rep >= spec.replicates) return;
            per_rep[rep] = run_replicate(spec, truth, targets, flags, rep);
          }
        } catch (...) {
          errors[w] = std::current_exception();
          next.store(spec.replicates);
        }
      });
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::pair<std::string, int64_t>> fail_counts;
  auto add_failure = [&fail_counts](const std::string& est) {
    for (auto& f : fail_counts)
      if (f.first == est) {
        f.second++;
        return;
      }
    fail_counts.emplace_back(est, 1);
  };
  for (int rep = 0; rep < spec.replicates; ++rep) {
    for (ReplicateOut& o : per_rep[rep].outs) res.replicates.push_back(std::move(o));
    for (const std::string& est : per_rep[rep].failed) add_failure(est);
  }

  std::vector<std::string> est_order;
  if (flags.initial) est_order.push_back("initial");
  if (flags.tmle) est_order.push_back("tmle");
  if (flags.hal_initial) est_order.push_back("hal_initial");
  if (flags.hal_tmle) est_order.push_back("hal_tmle");

  const size_t n_targets = res.labels.size();
  for (const std::string& est : est_order) {
    std::vector<double> sum(n_targets, 0.0), sum2(n_targets, 0.0), se_sum(n_targets, 0.0);
    std::vector<double> mse(n_targets, 0.0), width(n_targets, 0.0), width_sim(n_targets, 0.0);
    std::vector<int64_t> cover(n_targets, 0), cover_sim(n_targets, 0);
    int64_t reps = 0, bad = 0;
    for (const ReplicateOut& o : res.replicates) {
      if (o.estimator != est) continue;
      ++reps;
      if (!o.converged) ++bad;
      for (size_t k = 0; k < n_targets; ++k) {
        const double truth_k = res.truth.value[k];
        sum[k] += o.psi[k];
        sum2[k] += o.psi[k] * o.psi[k];
        mse[k] += (o.psi[k] - truth_k) * (o.psi[k] - truth_k);
        se_sum[k] += o.se[k];
        width[k] += o.hi[k] - o.lo[k];
        width_sim[k] += o.hi_sim[k] - o.lo_sim[k];
        if (o.lo[k] <= truth_k && truth_k <= o.hi[k]) ++cover[k];
        if (o.lo_sim[k] <= truth_k && truth_k <= o.hi_sim[k]) ++cover_sim[k];
      }
    }
    int64_t failed = 0;
    for (const auto& f : fail_counts)
      if (f.first == est) failed = f.second;
    for (size_t k = 0; k < n_targets; ++k) {
      MetricsRow row;
      row.estimator = est;
      row.target = res.labels[k];
      row.replicates = static_cast<int>(reps);
      row.truth = res.truth.value[k];
      row.nonconverged = bad;
      row.failures = failed;
      if (reps > 0) {
        const double mean = sum[k] / reps;
        row.bias = mean - row.truth;
        row.sd = reps > 1
                     ? std::sqrt(std::max(0.0, (sum2[k] - reps * mean * mean) / (reps - 1)))
                     : 0.0;
        row.mse = mse[k] / reps;
        row.coverage = static_cast<double>(cover[k]) / reps;
        row.width = width[k] / reps;
        row.cover_sim = static_cast<double>(cover_sim[k]) / reps;
        row.width_sim = width_sim[k] / reps;
        row.mean_se = se_sum[k] / reps;
      }
      res.metrics.push_back(std::move(row));
    }
  }
  return res;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const StudyResult& res, std::ostream& out) {
  out << "scenario,lambda,estimator,target,replicates,truth,bias,sd,mse,coverage,width,"
         "cover_sim,width_sim,mean_se,nonconverged,failures\n";
  for (const MetricsRow& r : res.metrics) {
    out << res.scenario.name << ',' << fmt(res.scenario.lambda) << ',' << r.estimator << ','
        << r.target << ',' << r.replicates << ',' << fmt(r.truth) << ',';
    if (r.replicates == 0)
      out << "NA,NA,NA,NA,NA,NA,NA,NA";
    else
      out << fmt(r.bias) << ',' << (r.replicates > 1 ? fmt(r.sd) : std::string("NA")) << ','
          << fmt(r.mse) << ',' << fmt(r.coverage) << ',' << fmt(r.width) << ','
          << fmt(r.cover_sim) << ',' << fmt(r.width_sim) << ',' << fmt(r.mean_se);
    out << ',' << r.nonconverged << ',' << r.failures << '\n';
  }
}

void write_replicates_csv(const StudyResult& res, std::ostream& out) {
  out << "scenario,replicate,estimator,target,estimate,se,lo,hi,lo_sim,hi_sim,converged\n";
  for (const ReplicateOut& o : res.replicates)
    for (size_t k = 0; k < res.labels.size(); ++k)
      out << res.scenario.name << ',' << o.replicate << ',' << o.estimator << ','
          << res.labels[k] << ',' << fmt(o.psi[k]) << ',' << fmt(o.se[k]) << ',' << fmt(o.lo[k])
          << ',' << fmt(o.hi[k]) << ',' << fmt(o.lo_sim[k]) << ',' << fmt(o.hi_sim[k]) << ','
          << (o.converged ? 1 : 0) << '\n';
}

}  // namespace medt
