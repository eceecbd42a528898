#include "povmap/psis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace povmap {

GpdFit fit_generalized_pareto(const VectorXd& x) {
  const Eigen::Index n = x.size();
  const double prior = 3.0;
  const int min_grid_pts = 30;
  const auto M = static_cast<Eigen::Index>(min_grid_pts + std::floor(std::sqrt(static_cast<double>(n))));
  const double x_star = x(static_cast<Eigen::Index>(std::floor(n / 4.0 + 0.5)) - 1);  // first quartile

  VectorXd theta(M);
  for (Eigen::Index j = 0; j < M; ++j) {
    theta(j) = 1.0 / x(n - 1) + (1.0 - std::sqrt(static_cast<double>(M) / (j + 0.5))) / prior / x_star;
  }
  VectorXd log_lik(M);
  for (Eigen::Index j = 0; j < M; ++j) {
    const double a = -theta(j);
    const double k = (a * x.array()).log1p().mean();
    log_lik(j) = static_cast<double>(n) * (std::log(a / k) - k - 1.0);
  }
  const double lse = log_sum_exp(log_lik);
  const VectorXd w = (log_lik.array() - lse).exp();
  const double theta_hat = theta.dot(w);

  GpdFit fit;
  double k = (-theta_hat * x.array()).log1p().mean();
  fit.sigma = -k / theta_hat;
  // Shrink toward 0.5 as if 10 prior observations had that shape.
  k = (k * static_cast<double>(n) + 10.0 * 0.5) / (static_cast<double>(n) + 10.0);
  fit.k = std::isnan(k) ? std::numeric_limits<double>::infinity() : k;
  return fit;
}

double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

PsisResult psis_smooth(const VectorXd& log_ratios) {
  const Eigen::Index S = log_ratios.size();
  if (S < 2) throw DataError("psis_smooth needs at least two draws");
  if (!log_ratios.allFinite()) throw NumericalError("psis_smooth: non-finite log ratio");
  PsisResult out;
  VectorXd lw = log_ratios.array() - log_ratios.maxCoeff();
  const auto tail_len = static_cast<Eigen::Index>(
      std::ceil(std::min(0.2 * static_cast<double>(S), 3.0 * std::sqrt(static_cast<double>(S)))));
  out.tail_length = static_cast<int>(tail_len);
  out.k_hat = 0.0;

  if (tail_len >= 5 && tail_len < S) {
    std::vector<Eigen::Index> order(S);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lw(a) < lw(b); });
    const Eigen::Index first_tail = S - tail_len;
    const double tail_max = lw(order[S - 1]);
    const double tail_min = lw(order[first_tail]);
    if (std::abs(tail_max - tail_min) >= std::numeric_limits<double>::epsilon() / 100.0) {
      const double cutoff = lw(order[first_tail - 1]);
      const double exp_cutoff = std::exp(cutoff);
      VectorXd exceed(tail_len);
      for (Eigen::Index j = 0; j < tail_len; ++j) exceed(j) = std::exp(lw(order[first_tail + j])) - exp_cutoff;
      const auto fit = fit_generalized_pareto(exceed);
      out.k_hat = fit.k;
      if (std::isfinite(fit.k)) {
        for (Eigen::Index j = 0; j < tail_len; ++j) {
          const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(tail_len);
          lw(order[first_tail + j]) = std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff);
        }
      }
    }
  }
  // Truncate at the raw maximum, which is 0 after shifting.
  lw = lw.cwiseMin(0.0);
  out.log_weights = lw.array() - log_sum_exp(lw);
  return out;
}

LooResult elpd_loo(const MatrixXd& ll) {
  if (ll.rows() < 1 || ll.cols() < 1) throw DataError("elpd_loo needs at least one draw and one observation");
  if (!ll.allFinite()) throw NumericalError("elpd_loo: non-finite pointwise log-likelihood");
  const Eigen::Index m = ll.cols();
  const auto R = static_cast<double>(ll.rows());
  LooResult res;
  res.pointwise_elpd.resize(m);
  res.pareto_k.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const VectorXd col = ll.col(i);
    const auto smoothed = psis_smooth(-col);
    res.pointwise_elpd(i) = log_sum_exp((smoothed.log_weights + col).eval());
    res.pareto_k(i) = smoothed.k_hat;
    res.lppd += log_sum_exp(col) - std::log(R);
  }
  if (!res.pointwise_elpd.allFinite()) throw NumericalError("elpd_loo: non-finite pointwise elpd");
  res.elpd_loo = res.pointwise_elpd.sum();
  const double mean = res.pointwise_elpd.mean();
  const double var = m > 1 ? (res.pointwise_elpd.array() - mean).square().sum() / static_cast<double>(m - 1) : 0.0;
  res.se_elpd = std::sqrt(static_cast<double>(m) * var);
  return res;
}

std::vector<CompareRow> compare(const std::vector<NamedLoo>& models) {
  if (models.empty()) return {};
  const auto m = models.front().loo.pointwise_elpd.size();
  for (const auto& mdl : models) {
    if (mdl.loo.pointwise_elpd.size() != m)
      throw DataError("compare: models were fit to different numbers of observations");
  }
  std::vector<const NamedLoo*> sorted;
  for (const auto& mdl : models) sorted.push_back(&mdl);
  std::stable_sort(sorted.begin(), sorted.end(), [](const NamedLoo* a, const NamedLoo* b) {
    if (a->loo.elpd_loo != b->loo.elpd_loo) return a->loo.elpd_loo > b->loo.elpd_loo;
    return a->name < b->name;
  });
  const VectorXd& best = sorted.front()->loo.pointwise_elpd;
  std::vector<CompareRow> rows;
  for (const auto* mdl : sorted) {
    CompareRow row;
    row.model_name = mdl->name;
    row.elpd_loo = mdl->loo.elpd_loo;
    const VectorXd diff = mdl->loo.pointwise_elpd - best;
    row.elpd_diff = diff.sum();
    const double mean = diff.mean();
    const double var = m > 1 ? (diff.array() - mean).square().sum() / static_cast<double>(m - 1) : 0.0;
    row.se_diff = std::sqrt(static_cast<double>(m) * var);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace povmap
