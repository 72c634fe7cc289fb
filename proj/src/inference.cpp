#include "medt/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace medt {

namespace {

bool cholesky(const std::vector<double>& a, size_t k, std::vector<double>* lout) {
  std::vector<double>& l = *lout;
  l.assign(k * k, 0.0);
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j <= i; ++j) {
      double s = a[i * k + j];
      for (size_t m = 0; m < j; ++m) s -= l[i * k + m] * l[j * k + m];
      if (i == j) {
        if (s <= 0.0) return false;
        l[i * k + i] = std::sqrt(s);
      } else {
        l[i * k + j] = s / l[j * k + j];
      }
    }
  }
  return true;
}

}  // namespace

CIResult simultaneous_ci(const std::vector<std::string>& labels,
                         const std::vector<double>& estimates,
                         const std::vector<std::vector<double>>& class_curves,
                         const Dataset& data, Rng& rng, const InferenceOptions& opts) {
  const size_t k = estimates.size();
  if (labels.size() != k || class_curves.size() != k)
    throw std::invalid_argument("simultaneous_ci: shape mismatch");
  const size_t n_classes = data.schema->classes.size();
  for (const auto& cc : class_curves)
    if (cc.size() != n_classes)
      throw std::invalid_argument("simultaneous_ci: curve length does not match the schema");

  CIResult r;
  r.labels = labels;
  r.estimate = estimates;
  r.covariance.assign(k * k, 0.0);
  for (size_t c = 0; c < n_classes; ++c) {
    const double w = data.class_weight[c];
    if (w == 0.0) continue;
    for (size_t a = 0; a < k; ++a) {
      const double da = class_curves[a][c];
      if (da == 0.0) continue;
      for (size_t b = 0; b <= a; ++b) r.covariance[a * k + b] += w * da * class_curves[b][c];
    }
  }
  for (size_t a = 0; a < k; ++a)
    for (size_t b = a + 1; b < k; ++b) r.covariance[a * k + b] = r.covariance[b * k + a];

  const double n = static_cast<double>(data.n());
  r.se.resize(k);
  for (size_t a = 0; a < k; ++a)
    r.se[a] = std::sqrt(std::max(0.0, r.covariance[a * k + a]) / n);

  r.correlation.assign(k * k, 0.0);
  for (size_t a = 0; a < k; ++a) {
    for (size_t b = 0; b < k; ++b) {
      const double d2 = r.covariance[a * k + a] * r.covariance[b * k + b];
      r.correlation[a * k + b] = d2 > 0.0 ? r.covariance[a * k + b] / std::sqrt(d2) : 0.0;
    }
    r.correlation[a * k + a] = 1.0;
  }

  std::vector<double> l;
  std::vector<double> m = r.correlation;
  double ridge = 0.0;
  while (k > 0 && !cholesky(m, k, &l)) {
    ridge = ridge == 0.0 ? 1e-8 : ridge * 10.0;
    if (ridge > 1e-2) {
      l.clear();
      break;
    }
    m = r.correlation;
    for (size_t a = 0; a < k; ++a) m[a * k + a] += ridge;
  }
  r.ridge_used = ridge;

  const double z = normal_quantile(0.5 + opts.level / 2.0);
  r.z_pointwise = z;
  double q = z;
  if (!l.empty() && opts.mc_draws > 0) {
    std::vector<double> zs(k);
    std::vector<double> mx(opts.mc_draws);
    for (size_t d = 0; d < opts.mc_draws; ++d) {
      for (double& v : zs) v = rng.normal();
      double mm = 0.0;
      for (size_t a = 0; a < k; ++a) {
        double y = 0.0;
        for (size_t b = 0; b <= a; ++b) y += l[a * k + b] * zs[b];
        mm = std::max(mm, std::fabs(y));
      }
      mx[d] = mm;
    }
    std::sort(mx.begin(), mx.end());
    size_t idx = static_cast<size_t>(std::ceil(opts.level * static_cast<double>(opts.mc_draws)));
    idx = idx > 0 ? idx - 1 : 0;
    if (idx >= mx.size()) idx = mx.size() - 1;
    q = std::max(mx[idx], z);
  }
  r.q_simultaneous = q;

  r.lo_pt.resize(k);
  r.hi_pt.resize(k);
  r.lo_sim.resize(k);
  r.hi_sim.resize(k);
  for (size_t a = 0; a < k; ++a) {
    r.lo_pt[a] = estimates[a] - z * r.se[a];
    r.hi_pt[a] = estimates[a] + z * r.se[a];
    r.lo_sim[a] = estimates[a] - q * r.se[a];
    r.hi_sim[a] = estimates[a] + q * r.se[a];
  }
  return r;
}

ContrastSet effect_contrasts(const Schema& schema, const TargetSpec& spec,
                             const EICBundle& bundle) {
  ContrastSet out;
  for (size_t o = 0; o < spec.outcomes.size(); ++o) {
    int ia = -1, ip = -1, ipp = -1;
    for (size_t i = 0; i < bundle.keys.size(); ++i) {
      if (static_cast<size_t>(bundle.keys[i].outcome) != o) continue;
      if (bundle.keys[i].role == PairRole::aa) ia = static_cast<int>(i);
      else if (bundle.keys[i].role == PairRole::aap) ip = static_cast<int>(i);
      else ipp = static_cast<int>(i);
    }
    if (ia < 0 || ip < 0 || ipp < 0)
      throw std::invalid_argument("effect_contrasts: all three arm roles are required per outcome");

    const OutcomeSpec& os = spec.outcomes[o];
    std::string base = schema.names.at(os.node);
    if (schema.nodes[os.node].n_levels != 2 || os.level != 1)
      base += "=" + std::to_string(os.level);

    auto add = [&](const char* tag, int i, int j) {
      out.labels.push_back(base + ":" + tag);
      out.estimates.push_back(bundle.targets[i].psi - bundle.targets[j].psi);
      std::vector<double> cur(schema.classes.size());
      for (size_t c = 0; c < cur.size(); ++c)
        cur[c] = bundle.targets[i].class_total[c] - bundle.targets[j].class_total[c];
      out.class_curves.push_back(std::move(cur));
    };
    add("nie", ia, ip);
    add("nde", ip, ipp);
    add("te", ia, ipp);
  }
  return out;
}

}  // namespace medt
