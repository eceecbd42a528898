#pragma once

// Pareto-smoothed importance sampling leave-one-out cross-validation.

#include "povmap/types.hpp"

#include <string>
#include <vector>

namespace povmap {

struct GpdFit {
  double k = 0.0;      // shape, after the weakly informative shrinkage toward 0.5
  double sigma = 0.0;  // scale
};

/// Zhang-Stephens profile-posterior fit of a generalized Pareto distribution to
/// exceedances x (ascending, nonnegative).
GpdFit fit_generalized_pareto(const VectorXd& x_sorted);

/// Quantile function of the generalized Pareto distribution with location 0.
double gpd_quantile(double p, double k, double sigma);

struct PsisResult {
  VectorXd log_weights;  // normalized: log-sum-exp is 0
  double k_hat = 0.0;
  int tail_length = 0;
};

/// Smooths the largest min(0.2 R, 3 sqrt(R)) importance ratios, truncates at the raw maximum.
PsisResult psis_smooth(const VectorXd& log_ratios);

inline constexpr double kParetoKWarning = 0.7;

struct LooResult {
  double elpd_loo = 0.0;
  double se_elpd = 0.0;
  VectorXd pointwise_elpd;
  VectorXd pareto_k;
  double lppd = 0.0;  // in-sample log pointwise predictive density
};

/// pointwise_loglik is R draws x m observations.
LooResult elpd_loo(const MatrixXd& pointwise_loglik);

struct NamedLoo {
  std::string name;
  LooResult loo;
};

struct CompareRow {
  std::string model_name;
  double elpd_loo = 0.0;
  double elpd_diff = 0.0;
  double se_diff = 0.0;
};

/// Rows sorted best-first; ties broken by model name so the output does not depend on input order.
std::vector<CompareRow> compare(const std::vector<NamedLoo>& models);

}  // namespace povmap
