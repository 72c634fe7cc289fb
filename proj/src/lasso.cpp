#include "medt/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace medt {

namespace {

double soft(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Dense symmetric solve, Gaussian elimination with partial pivoting.
bool solve_dense(std::vector<double>& m, std::vector<double>* rhs, size_t n) {
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r * n + col]) > std::fabs(m[piv * n + col])) piv = r;
    if (std::fabs(m[piv * n + col]) < 1e-12) return false;
    if (piv != col) {
      for (size_t c = 0; c < n; ++c) std::swap(m[col * n + c], m[piv * n + c]);
      std::swap((*rhs)[col], (*rhs)[piv]);
    }
    const double d = m[col * n + col];
    for (size_t r = col + 1; r < n; ++r) {
      const double f = m[r * n + col] / d;
      if (f == 0.0) continue;
      for (size_t c = col; c < n; ++c) m[r * n + c] -= f * m[col * n + c];
      (*rhs)[r] -= f * (*rhs)[col];
    }
  }
  for (size_t col = n; col-- > 0;) {
    double s = (*rhs)[col];
    for (size_t c = col + 1; c < n; ++c) s -= m[col * n + c] * (*rhs)[c];
    (*rhs)[col] = s / m[col * n + col];
  }
  return true;
}

// Coordinate descent over cached gram rows: visiting a column costs one pass
// over the nonzero set instead of the data rows.  Once the set settles, the
// sign-fixed restricted optimum is solved directly and kept only when it
// lowers the penalized objective; convergence is still certified by full
// coordinate sweeps against the tolerance.
struct Work {
  const LassoData* d = nullptr;
  double wsum = 0.0;
  double yy = 0.0;
  std::vector<double> znorm;              // gram diagonal
  std::vector<double> xy;                 // (1/W) sum w x_j y
  std::vector<std::vector<double>> gram;  // row j filled on first activation
  std::vector<char> has_gram;
  std::vector<int> act;  // columns with nonzero beta
  std::vector<char> in_act;
  int sweeps_used = 0;

  void init(const LassoData& data) {
    d = &data;
    wsum = 0.0;
    for (double v : data.w) wsum += v;
    znorm.assign(data.cols, 0.0);
    xy.assign(data.cols, 0.0);
    yy = 0.0;
    gram.assign(data.cols, {});
    has_gram.assign(data.cols, 0);
    if (wsum <= 0.0) return;
    for (size_t i = 0; i < data.rows; ++i) yy += data.w[i] * data.y[i] * data.y[i];
    yy /= wsum;
    for (size_t j = 0; j < data.cols; ++j) {
      const double* col = data.x.data() + j * data.rows;
      double zn = 0.0, s = 0.0;
      for (size_t i = 0; i < data.rows; ++i) {
        zn += data.w[i] * col[i] * col[i];
        s += data.w[i] * col[i] * data.y[i];
      }
      znorm[j] = zn / wsum;
      xy[j] = s / wsum;
    }
  }

  void fill_gram(size_t j) {
    if (has_gram[j]) return;
    has_gram[j] = 1;
    auto& row = gram[j];
    row.assign(d->cols, 0.0);
    const double* colj = d->x.data() + j * d->rows;
    std::vector<double> wx(d->rows);
    for (size_t i = 0; i < d->rows; ++i) wx[i] = d->w[i] * colj[i];
    for (size_t k = 0; k < d->cols; ++k) {
      const double* colk = d->x.data() + k * d->rows;
      double s = 0.0;
      for (size_t i = 0; i < d->rows; ++i) s += wx[i] * colk[i];
      row[k] = s / wsum;
    }
  }

  void activate(size_t j) {
    if (in_act[j]) return;
    in_act[j] = 1;
    act.push_back(static_cast<int>(j));
    fill_gram(j);
  }

  void rebuild_active(const std::vector<double>& beta) {
    act.clear();
    in_act.assign(d->cols, 0);
    for (size_t j = 0; j < d->cols; ++j)
      if (beta[j] != 0.0) activate(j);
  }

  void compact(const std::vector<double>& beta) {
    size_t keep = 0;
    for (int j : act) {
      if (beta[j] != 0.0)
        act[keep++] = j;
      else
        in_act[j] = 0;
    }
    act.resize(keep);
  }

  double gdot(size_t j, const std::vector<double>& beta) const {
    double s = 0.0;
    for (int k : act) s += gram[k][j] * beta[k];
    return s;
  }

  double objective(const std::vector<double>& beta, double lambda) const {
    double quad = 0.0, lin = 0.0, l1 = 0.0;
    for (int j : act) {
      const double b = beta[j];
      if (b == 0.0) continue;
      lin += xy[j] * b;
      l1 += std::fabs(b);
      double s = 0.0;
      for (int k : act) s += gram[j][k] * beta[k];
      quad += b * s;
    }
    return 0.5 * (yy - 2.0 * lin + quad) + lambda * l1;
  }

  double sweep(std::vector<double>* beta, double lambda, bool full) {
    double max_move = 0.0;
    const size_t limit = full ? d->cols : act.size();
    for (size_t idx = 0; idx < limit; ++idx) {
      const size_t j = full ? idx : static_cast<size_t>(act[idx]);
      const double zj = znorm[j];
      if (zj <= 0.0) continue;
      const double bj = (*beta)[j];
      const double rho = xy[j] - gdot(j, *beta) + zj * bj;
      const double nb = soft(rho, lambda) / zj;
      const double delta = nb - bj;
      if (delta != 0.0) {
        (*beta)[j] = nb;
        if (nb != 0.0) activate(j);
      }
      max_move = std::max(max_move, std::fabs(delta));
    }
    compact(*beta);
    return max_move;
  }

  // Solves the restricted problem with the current signs held fixed,
  // dropping sign-infeasible columns and re-solving.  Accepts the candidate
  // only when the objective does not increase.
  bool refine(std::vector<double>* beta, double lambda) {
    if (act.empty() || act.size() > 400) return false;
    std::vector<int> sub = act;
    for (int guard = 0; guard < 60 && !sub.empty(); ++guard) {
      const size_t m = sub.size();
      std::vector<double> mat(m * m);
      std::vector<double> rhs(m);
      for (size_t r = 0; r < m; ++r) {
        const auto& row = gram[sub[r]];
        for (size_t c = 0; c < m; ++c) mat[r * m + c] = row[sub[c]];
        rhs[r] = xy[sub[r]] - lambda * ((*beta)[sub[r]] > 0.0 ? 1.0 : -1.0);
      }
      if (!solve_dense(mat, &rhs, m)) return false;
      int drop = -1;
      for (size_t r = 0; r < m; ++r) {
        const bool want_pos = (*beta)[sub[r]] > 0.0;
        if (rhs[r] == 0.0 || (rhs[r] > 0.0) != want_pos) {
          drop = static_cast<int>(r);
          break;
        }
      }
      if (drop >= 0) {
        sub.erase(sub.begin() + drop);
        continue;
      }
      std::vector<double> cand = *beta;
      for (int j : act) cand[j] = 0.0;
      for (size_t r = 0; r < m; ++r) cand[sub[r]] = rhs[r];
      const double f_old = objective(*beta, lambda);
      const double f_new = objective(cand, lambda);
      if (f_new <= f_old + 1e-14) {
        *beta = std::move(cand);
        compact(*beta);
        return true;
      }
      return false;
    }
    return false;
  }

  // Full CD solve at one penalty, in place.
  void solve(std::vector<double>* beta, double lambda, const LassoOptions& o) {
    rebuild_active(*beta);
    while (sweeps_used < o.max_sweeps) {
      ++sweeps_used;
      if (sweep(beta, lambda, true) <= o.tol) return;
      for (int r = 0; r < 3 && sweeps_used < o.max_sweeps; ++r) {
        ++sweeps_used;
        if (sweep(beta, lambda, false) <= o.tol) break;
      }
      if (refine(beta, lambda)) continue;
      while (sweeps_used < o.max_sweeps) {
        ++sweeps_used;
        if (sweep(beta, lambda, false) <= o.tol) break;
      }
    }
  }
};

const std::vector<double>* select_bound(const LassoPath& path, double bound) {
  const std::vector<double>* best = nullptr;
  double best_norm = -1.0;
  for (size_t t = 0; t < path.beta.size(); ++t) {
    const double nrm = path.l1_norm[t];
    if (nrm <= bound + 1e-12 && nrm >= best_norm) {
      best_norm = nrm;
      best = &path.beta[t];
    }
  }
  return best;
}

double weighted_mse(const LassoData& d, const std::vector<double>& beta,
                    const std::vector<char>& use, double* wtot) {
  std::vector<double> fit(d.rows, 0.0);
  for (size_t j = 0; j < d.cols; ++j) {
    if (beta[j] == 0.0) continue;
    const double* col = d.x.data() + j * d.rows;
    for (size_t i = 0; i < d.rows; ++i) fit[i] += beta[j] * col[i];
  }
  double sse = 0.0, ws = 0.0;
  for (size_t i = 0; i < d.rows; ++i) {
    if (!use[i]) continue;
    const double e = d.y[i] - fit[i];
    sse += d.w[i] * e * e;
    ws += d.w[i];
  }
  *wtot = ws;
  return sse;
}

}  // namespace

std::vector<double> lasso_cd(const LassoData& d, double lambda, const LassoOptions& o,
                             const std::vector<double>* warm) {
  if (d.x.size() != d.rows * d.cols || d.y.size() != d.rows || d.w.size() != d.rows)
    throw std::invalid_argument("lasso_cd: shape mismatch");
  if (lambda < 0.0) throw std::invalid_argument("lasso_cd: negative penalty");
  Work wk;
  wk.init(d);
  std::vector<double> beta;
  if (warm && warm->size() == d.cols)
    beta = *warm;
  else
    beta.assign(d.cols, 0.0);
  if (wk.wsum > 0.0) wk.solve(&beta, lambda, o);
  return beta;
}

LassoPath lasso_path(const LassoData& d, const LassoOptions& o) {
  if (d.x.size() != d.rows * d.cols || d.y.size() != d.rows || d.w.size() != d.rows)
    throw std::invalid_argument("lasso_path: shape mismatch");
  LassoPath path;
  Work wk;
  wk.init(d);

  double lmax = 0.0;
  if (wk.wsum > 0.0)
    for (size_t j = 0; j < d.cols; ++j)
      if (wk.znorm[j] > 0.0) lmax = std::max(lmax, std::fabs(wk.xy[j]));
  if (lmax <= 0.0) {
    path.lambda.push_back(0.0);
    path.l1_norm.push_back(0.0);
    path.beta.emplace_back(d.cols, 0.0);
    return path;
  }

  std::vector<double> beta(d.cols, 0.0);
  const double ratio = std::pow(o.lambda_min_ratio, 1.0 / std::max(1, o.n_lambda - 1));
  double lam = lmax;
  for (int t = 0; t < o.n_lambda; ++t) {
    wk.sweeps_used = 0;
    wk.solve(&beta, lam, o);
    size_t nnz = 0;
    double nrm = 0.0;
    for (double b : beta) {
      if (b != 0.0) ++nnz;
      nrm += std::fabs(b);
    }
    if (o.max_nonzero > 0 && nnz > o.max_nonzero) break;
    path.lambda.push_back(lam);
    path.l1_norm.push_back(nrm);
    path.beta.push_back(beta);
    lam *= ratio;
  }
  return path;
}

std::vector<double> lasso_at_bound(const LassoData& d, const LassoPath& path, double bound,
                                   const LassoOptions& o) {
  if (path.beta.empty()) return std::vector<double>(d.cols, 0.0);
  if (!std::isfinite(bound)) return lasso_cd(d, 0.0, o, &path.beta.back());
  const std::vector<double>* pick = select_bound(path, bound);
  return pick ? *pick : std::vector<double>(d.cols, 0.0);
}

LassoCvChoice lasso_cv(const LassoData& d, const std::vector<int>& fold, int n_folds,
                       int n_bounds, const LassoOptions& o) {
  if (fold.size() != d.rows) throw std::invalid_argument("lasso_cv: fold labels per row");
  if (n_folds < 2) throw std::invalid_argument("lasso_cv: needs at least two folds");
  if (n_bounds < 1) throw std::invalid_argument("lasso_cv: needs a bound grid");

  LassoCvChoice out;
  out.full_path = lasso_path(d, o);
  double cmax = 0.0;
  for (double nrm : out.full_path.l1_norm) cmax = std::max(cmax, nrm);
  if (cmax <= 0.0) {
    out.bounds.assign(1, 0.0);
    out.risk.assign(1, 0.0);
    out.beta.assign(d.cols, 0.0);
    std::vector<char> use(d.rows, 1);
    double ws = 0.0;
    const double sse = weighted_mse(d, out.beta, use, &ws);
    out.risk[0] = ws > 0.0 ? sse / ws : 0.0;
    out.best_risk = out.risk[0];
    return out;
  }

  out.bounds.resize(n_bounds);
  const double cmin = cmax * 1e-3;
  const double step = n_bounds > 1 ? std::pow(cmax / cmin, 1.0 / (n_bounds - 1)) : 1.0;
  double c = cmin;
  for (int t = 0; t < n_bounds; ++t) {
    out.bounds[t] = std::min(c, cmax);
    c *= step;
  }
  out.bounds.back() = cmax;

  std::vector<double> sse(n_bounds, 0.0);
  double wtest_total = 0.0;
  for (int f = 0; f < n_folds; ++f) {
    LassoData train;
    train.rows = d.rows;
    train.cols = d.cols;
    train.x = d.x;
    train.y = d.y;
    train.w = d.w;
    std::vector<char> test(d.rows, 0);
    bool any_train = false, any_test = false;
    for (size_t i = 0; i < d.rows; ++i) {
      if (fold[i] == f) {
        train.w[i] = 0.0;
        test[i] = 1;
        any_test = true;
      } else if (d.w[i] > 0.0) {
        any_train = true;
      }
    }
    if (!any_test) continue;
    LassoPath pf;
    if (any_train) pf = lasso_path(train, o);
    double ws = 0.0;
    bool counted = false;
    for (int t = 0; t < n_bounds; ++t) {
      const std::vector<double>* beta = nullptr;
      if (!pf.beta.empty()) beta = select_bound(pf, out.bounds[t]);
      std::vector<double> zero;
      const std::vector<double>* use_beta = beta;
      if (!use_beta) {
        zero.assign(d.cols, 0.0);
        use_beta = &zero;
      }
      const double s = weighted_mse(d, *use_beta, test, &ws);
      sse[t] += s;
      if (!counted) {
        wtest_total += ws;
        counted = true;
      }
    }
  }

  out.risk.resize(n_bounds);
  int best = 0;
  for (int t = 0; t < n_bounds; ++t) {
    out.risk[t] = wtest_total > 0.0 ? sse[t] / wtest_total : 0.0;
    if (out.risk[t] < out.risk[best] - 1e-15) best = t;
  }
  out.best_bound = out.bounds[best];
  out.best_risk = out.risk[best];
  const std::vector<double>* pick = select_bound(out.full_path, out.best_bound);
  out.beta = pick ? *pick : std::vector<double>(d.cols, 0.0);
  return out;
}

}  // namespace medt
