#pragma once

#include <cstddef>
#include <vector>

namespace medt {

// Weighted problem on collapsed rows; x is column-major (x[j * rows + i]).
struct LassoData {
  size_t rows = 0, cols = 0;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> w;
};

struct LassoOptions {
  int n_lambda = 30;
  double lambda_min_ratio = 1e-4;
  double tol = 1e-7;        // max coordinate move per sweep
  int max_sweeps = 10000;
  size_t max_nonzero = 0;   // 0 = uncapped; the path stops before exceeding it
};

// Coordinate descent on (1/2W) sum_i w_i (y_i - x_i beta)^2 + lambda |beta|_1
// with W = sum w.  Active-set sweeps between full passes; warm start optional.
std::vector<double> lasso_cd(const LassoData& d, double lambda, const LassoOptions& o,
                             const std::vector<double>* warm = nullptr);

struct LassoPath {
  std::vector<double> lambda;
  std::vector<double> l1_norm;
  std::vector<std::vector<double>> beta;
};

// Log-spaced penalties from the null-model point downward, warm-started.
LassoPath lasso_path(const LassoData& d, const LassoOptions& o);

// Constrained solve via the path: the path point with the largest l1 norm not
// above the bound.  An infinite bound refines the path end at zero penalty.
std::vector<double> lasso_at_bound(const LassoData& d, const LassoPath& path, double bound,
                                   const LassoOptions& o);

struct LassoCvChoice {
  std::vector<double> bounds;
  std::vector<double> risk;   // cross-validated weighted MSE per bound
  double best_bound = 0.0;
  double best_risk = 0.0;
  std::vector<double> beta;   // full-data coefficients at best_bound
  LassoPath full_path;
};

// Norm-bound selection: the bound grid is log-spaced up to the full path's
// largest norm, per-fold fits are read off each fold's own path, and the
// winner (smallest bound on ties) indexes the full path.
LassoCvChoice lasso_cv(const LassoData& d, const std::vector<int>& fold, int n_folds,
                       int n_bounds, const LassoOptions& o);

}  // namespace medt
