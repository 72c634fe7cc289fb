#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "medt/rng.hpp"
#include "medt/simstudy.hpp"

namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  return out;
}

uint64_t resolve_seed(long long flag_seed) {
  if (flag_seed >= 0) return static_cast<uint64_t>(flag_seed);
  const char* env = std::getenv("MEDT_SEED");
  if (env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0')
      throw std::invalid_argument("MEDT_SEED is not an integer: " + std::string(env));
    return v;
  }
  throw std::invalid_argument("seed required: pass --seed or set MEDT_SEED");
}

struct EstimateArgs {
  std::string schema_path, data_path, targets_path;
  std::string out_path, trace_csv, diagnostics;
  std::string mode = "onestep";
  std::string fit_model = "logistic";
  double dx = 0.01, p_min = 1e-6, level = 0.95;
  int max_iter = 500, folds = 5, knot_cap = 2000, beta_refits = 2;
  long long hal_n = -1;
  long long mc_draws = 100000;
  long long seed = -1;
};

void write_trace_csv(const medt::TMLEResult& result, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "iteration,max_abs_score,max_threshold,log_lik,step\n";
  char buf[160];
  for (const medt::TmleTraceRow& r : result.trace) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g\n", r.iteration, r.max_abs_score,
                  r.max_threshold, r.log_lik, r.step);
    out << buf;
  }
}

void write_diagnostics_csv(const std::vector<medt::EicReport>& reports, const medt::Schema& schema,
                           const std::string& path) {
  std::ofstream out = open_out(path);
  out << "target,component,pn_d,sd,threshold,breach_rows\n";
  char buf[200];
  for (const medt::EicReport& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,total,%.12g,%.12g,%.12g,%lld\n", r.label.c_str(),
                  r.pn_total, r.sd_total, r.threshold, static_cast<long long>(r.breach_rows));
    out << buf;
    std::snprintf(buf, sizeof buf, "%s,baseline,%.12g,NA,NA,NA\n", r.label.c_str(), r.pn_l0);
    out << buf;
    for (size_t x = 0; x < schema.nodes.size(); ++x) {
      if (!schema.nodes[x].fluctuable()) continue;
      std::snprintf(buf, sizeof buf, "%s,%s,%.12g,NA,NA,NA\n", r.label.c_str(),
                    schema.names[x].c_str(), r.pn_node[x]);
      out << buf;
    }
  }
}

int cmd_estimate(const EstimateArgs& a) {
  auto schema = medt::schema_from_json(slurp(a.schema_path));
  medt::Dataset data = medt::read_csv_file(schema, a.data_path);
  medt::TargetSpec targets = medt::target_spec_from_json(*schema, slurp(a.targets_path));
  const uint64_t seed = resolve_seed(a.seed);
  const medt::Rng base(seed);

  medt::ModelSpec mspec;
  if (a.fit_model == "saturated")
    mspec.default_model = medt::FitModel::saturated;
  else if (a.fit_model != "logistic")
    throw std::invalid_argument("--fit-model must be logistic or saturated");
  medt::FitOptions fopts;
  fopts.p_min = a.p_min;
  medt::FactorizedLikelihood fit0 = medt::fit_initial(data, mspec, fopts);

  medt::TMLEConfig tcfg;
  tcfg.dx = a.dx;
  tcfg.max_iterations = a.max_iter;

  json out;
  medt::TMLEResult result;
  if (a.mode == "haleic") {
    if (a.hal_n == 0) throw std::invalid_argument("--hal-N must be positive");
    medt::HalOptions hopts;
    hopts.n_folds = a.folds;
    hopts.knot_cap = a.knot_cap;
    hopts.beta_refits = a.beta_refits;
    hopts.resample_n = a.hal_n < 0 ? data.n() : static_cast<size_t>(a.hal_n);
    hopts.tmle = tcfg;
    hopts.tmle.mode = medt::TmleMode::onestep;
    medt::Rng hal_rng = base.fork(3);
    medt::HalTmleResult hr = medt::haleic_tmle(fit0, data, targets, hal_rng, hopts);
    result = std::move(hr.inner);
    out["refits"] = hr.refits;
  } else {
    tcfg.mode = medt::tmle_mode_from_name(a.mode);
    result = medt::run_tmle(fit0, data, targets, tcfg);
  }

  std::vector<std::string> labels = result.bundle.labels;
  std::vector<double> est;
  std::vector<std::vector<double>> curves;
  for (const medt::EicComponents& t : result.bundle.targets) {
    est.push_back(t.psi);
    curves.push_back(t.class_total);
  }
  const size_t n_targets = labels.size();
  bool all_roles = targets.roles.size() == 3;
  if (all_roles) {
    medt::ContrastSet cs = medt::effect_contrasts(*schema, targets, result.bundle);
    for (size_t i = 0; i < cs.labels.size(); ++i) {
      labels.push_back(cs.labels[i]);
      est.push_back(cs.estimates[i]);
      curves.push_back(std::move(cs.class_curves[i]));
    }
  }

  medt::InferenceOptions iopts;
  iopts.level = a.level;
  iopts.mc_draws = static_cast<size_t>(a.mc_draws);
  medt::Rng mc_rng = base.fork(2);
  medt::CIResult ci = medt::simultaneous_ci(labels, est, curves, data, mc_rng, iopts);

  out["mode"] = a.mode;
  out["n"] = data.n();
  out["seed"] = seed;
  out["level"] = a.level;
  out["converged"] = result.converged;
  out["iterations"] = result.iterations;
  out["stop_reason"] = result.stop_reason;
  out["z_pointwise"] = ci.z_pointwise;
  out["q_simultaneous"] = ci.q_simultaneous;
  auto row = [&ci](size_t i) {
    json t;
    t["label"] = ci.labels[i];
    t["estimate"] = ci.estimate[i];
    t["se"] = ci.se[i];
    t["lo"] = ci.lo_pt[i];
    t["hi"] = ci.hi_pt[i];
    t["lo_sim"] = ci.lo_sim[i];
    t["hi_sim"] = ci.hi_sim[i];
    return t;
  };
  out["targets"] = json::array();
  for (size_t i = 0; i < n_targets; ++i) out["targets"].push_back(row(i));
  out["contrasts"] = json::array();
  for (size_t i = n_targets; i < ci.labels.size(); ++i) out["contrasts"].push_back(row(i));

  std::vector<medt::EicReport> reports = medt::empirical_scores(result.bundle, data);
  out["positivity"] = json::array();
  for (const medt::EicReport& r : reports)
    out["positivity"].push_back({{"label", r.label},
                                 {"pn_d", r.pn_total},
                                 {"sd", r.sd_total},
                                 {"threshold", r.threshold},
                                 {"breach_rows", r.breach_rows}});

  if (!a.trace_csv.empty()) write_trace_csv(result, a.trace_csv);
  if (!a.diagnostics.empty()) write_diagnostics_csv(reports, *schema, a.diagnostics);

  const std::string text = out.dump(2) + "\n";
  if (a.out_path.empty()) {
    std::cout << text;
  } else {
    open_out(a.out_path) << text;
  }
  return result.converged ? 0 : 2;
}

struct StudyArgs {
  std::string scenario_path, out_dir;
  long long reps = -1;
  long long seed = -1;
  int jobs = 1;
};

int cmd_replicate_study(const StudyArgs& a) {
  medt::ScenarioSpec spec = medt::scenario_from_json(slurp(a.scenario_path));
  if (a.reps >= 0) spec.replicates = static_cast<int>(a.reps);
  if (a.seed >= 0) spec.seed = static_cast<uint64_t>(a.seed);
  if (a.jobs < 1) throw std::invalid_argument("--jobs must be positive");

  medt::StudyResult res = medt::run_study(spec, a.jobs);

  std::filesystem::create_directories(a.out_dir);
  const std::string stem = (std::filesystem::path(a.out_dir) / spec.name).string();
  {
    std::ofstream out = open_out(stem + "_metrics.csv");
    medt::write_metrics_csv(res, out);
  }
  {
    std::ofstream out = open_out(stem + "_replicates.csv");
    medt::write_replicates_csv(res, out);
  }
  json summary;
  summary["scenario"] = json::parse(medt::scenario_to_json(spec));
  summary["truth"] = {{"labels", res.truth.labels}, {"values", res.truth.value}};
  summary["metrics_csv"] = spec.name + "_metrics.csv";
  summary["replicates_csv"] = spec.name + "_replicates.csv";
  json agg = json::array();
  for (const medt::MetricsRow& r : res.metrics) {
    if (r.target != res.labels.front()) continue;  // one row per estimator
    agg.push_back({{"estimator", r.estimator},
                   {"replicates", r.replicates},
                   {"nonconverged", r.nonconverged},
                   {"failures", r.failures}});
  }
  summary["estimators"] = agg;
  open_out(stem + "_summary.json") << summary.dump(2) << "\n";
  return 0;
}

struct SimulateArgs {
  std::string scenario_path, out_path;
  long long n = -1;
  long long seed = -1;
  double lambda = -1.0;
};

int cmd_simulate(const SimulateArgs& a) {
  medt::ScenarioSpec spec;
  if (!a.scenario_path.empty()) spec = medt::scenario_from_json(slurp(a.scenario_path));
  if (a.n >= 0) spec.n = static_cast<size_t>(a.n);
  if (a.lambda > 0.0) spec.lambda = a.lambda;
  if (a.seed >= 0)
    spec.seed = static_cast<uint64_t>(a.seed);
  else if (a.scenario_path.empty())
    spec.seed = resolve_seed(-1);
  if (spec.n == 0) throw std::invalid_argument("--n must be positive");

  auto schema = medt::benchmark_schema();
  medt::FactorizedLikelihood truth = medt::benchmark_truth(schema, spec.lambda);
  medt::Rng rng = medt::Rng(spec.seed).fork(1, 0);  // replicate 0's stream
  medt::Dataset data = medt::sample_dataset(truth, spec.n, rng);
  if (a.out_path.empty()) {
    medt::write_csv(data, std::cout);
  } else {
    medt::write_csv_file(data, a.out_path);
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out_dir;
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int cmd_report(const ReportArgs& a) {
  const std::string header =
      "scenario,lambda,estimator,target,replicates,truth,bias,sd,mse,coverage,width,"
      "cover_sim,width_sim,mean_se,nonconverged,failures";
  std::vector<std::vector<std::string>> rows;
  for (const std::string& path : a.inputs) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) throw std::invalid_argument(path + ": not a metrics csv");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells = split_line(line);
      if (cells.size() != 16) throw std::invalid_argument(path + ": bad row");
      rows.push_back(std::move(cells));
    }
  }
  auto key = [](const std::vector<std::string>& r) {
    return std::make_tuple(r[0], std::atof(r[1].c_str()), r[3], r[2]);
  };
  std::stable_sort(rows.begin(), rows.end(),
                   [&key](const auto& x, const auto& y) { return key(x) < key(y); });

  std::filesystem::create_directories(a.out_dir);
  {
    std::ofstream out = open_out((std::filesystem::path(a.out_dir) / "comparison.csv").string());
    out << header << "\n";
    for (const auto& r : rows) {
      for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << "\n";
    }
  }
  {
    // one curve per (target, estimator): lambda against mse/coverage/width
    std::vector<std::vector<std::string>> grid = rows;
    auto gkey = [](const std::vector<std::string>& r) {
      return std::make_tuple(r[3], r[2], std::atof(r[1].c_str()), r[0]);
    };
    std::stable_sort(grid.begin(), grid.end(),
                     [&gkey](const auto& x, const auto& y) { return gkey(x) < gkey(y); });
    std::ofstream out = open_out((std::filesystem::path(a.out_dir) / "lambda_grid.csv").string());
    out << "target,estimator,lambda,scenario,mse,coverage,width\n";
    for (const auto& r : grid)
      out << r[3] << ',' << r[2] << ',' << r[1] << ',' << r[0] << ',' << r[8] << ',' << r[9]
          << ',' << r[10] << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longitudinal mediation targets: estimation and replication"};
  app.require_subcommand(1);

  EstimateArgs ea;
  CLI::App* est = app.add_subcommand("estimate", "estimate targets and contrasts from a CSV");
  est->add_option("--schema", ea.schema_path, "schema JSON path")->required();
  est->add_option("--data", ea.data_path, "data CSV path")->required();
  est->add_option("--targets", ea.targets_path, "targets JSON path")->required();
  est->add_option("--mode", ea.mode, "updater: iterative, onestep, or haleic")
      ->check(CLI::IsMember({"iterative", "onestep", "haleic"}));
  est->add_option("--fit-model", ea.fit_model, "initial fit: logistic or saturated");
  est->add_option("--dx", ea.dx, "one-step path step length");
  est->add_option("--max-iter", ea.max_iter, "update iteration cap");
  est->add_option("--p-min", ea.p_min, "density floor");
  est->add_option("--hal-N", ea.hal_n, "haleic resample size (default: n)");
  est->add_option("--folds", ea.folds, "haleic cross-validation folds");
  est->add_option("--knot-cap", ea.knot_cap, "haleic basis size cap per node");
  est->add_option("--beta-refits", ea.beta_refits, "haleic coefficient refit passes");
  est->add_option("--level", ea.level, "confidence level");
  est->add_option("--mc-draws", ea.mc_draws, "simultaneous quantile draws");
  est->add_option("--seed", ea.seed, "rng seed (fallback: MEDT_SEED)");
  est->add_option("--out", ea.out_path, "output JSON path (default: stdout)");
  est->add_option("--trace-csv", ea.trace_csv, "write per-iteration trace CSV");
  est->add_option("--diagnostics", ea.diagnostics, "write score/positivity CSV");

  StudyArgs sa;
  CLI::App* study = app.add_subcommand("replicate-study", "run a simulation scenario");
  study->add_option("--scenario", sa.scenario_path, "scenario JSON path")->required();
  study->add_option("--reps", sa.reps, "override replicate count");
  study->add_option("--jobs", sa.jobs, "worker threads over replicates");
  study->add_option("--seed", sa.seed, "override scenario seed");
  study->add_option("--out", sa.out_dir, "output directory")->required();

  SimulateArgs ma;
  CLI::App* sim = app.add_subcommand("simulate", "draw one benchmark dataset");
  sim->add_option("--scenario", ma.scenario_path, "scenario JSON path (optional)");
  sim->add_option("--n", ma.n, "rows to draw");
  sim->add_option("--lambda", ma.lambda, "positivity stress factor");
  sim->add_option("--seed", ma.seed, "rng seed (fallback: MEDT_SEED)");
  sim->add_option("--out", ma.out_path, "output CSV path (default: stdout)");

  ReportArgs ra;
  CLI::App* rep = app.add_subcommand("report", "combine study metrics CSVs");
  rep->add_option("--in", ra.inputs, "metrics CSV paths")->required()->expected(-1);
  rep->add_option("--out", ra.out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (est->parsed()) return cmd_estimate(ea);
    if (study->parsed()) return cmd_replicate_study(sa);
    if (sim->parsed()) return cmd_simulate(ma);
    if (rep->parsed()) return cmd_report(ra);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
