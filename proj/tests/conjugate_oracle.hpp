#pragma once

// Normal-normal conjugate model y_i ~ N(mu, s^2), mu ~ N(0, t^2), with exact posterior
// draws and closed-form leave-one-out predictive densities. Used as an independent
// oracle for PSIS-LOO.

#include "povmap/types.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace povmap::testing {

struct ConjugateProblem {
  VectorXd y;
  double s = 1.0;
  double t = 10.0;
  MatrixXd loglik;  // draws x observations
  double exact_elpd = 0.0;
};

inline double normal_logpdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

inline ConjugateProblem conjugate_problem(std::uint64_t seed, int n = 8, int draws = 4000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  ConjugateProblem p;
  const double mu_true = p.t * n01(rng) * 0.1;
  p.y.resize(n);
  for (int i = 0; i < n; ++i) p.y(i) = mu_true + p.s * n01(rng);

  auto posterior = [&](double sum, int count) {
    const double prec = 1.0 / (p.t * p.t) + count / (p.s * p.s);
    return std::pair{sum / (p.s * p.s) / prec, 1.0 / prec};
  };
  const auto [mean, var] = posterior(p.y.sum(), n);
  p.loglik.resize(draws, n);
  for (int r = 0; r < draws; ++r) {
    const double mu = mean + std::sqrt(var) * n01(rng);
    for (int i = 0; i < n; ++i) p.loglik(r, i) = normal_logpdf(p.y(i), mu, p.s * p.s);
  }
  for (int i = 0; i < n; ++i) {
    const auto [m_i, v_i] = posterior(p.y.sum() - p.y(i), n - 1);
    p.exact_elpd += normal_logpdf(p.y(i), m_i, v_i + p.s * p.s);
  }
  return p;
}

}  // namespace povmap::testing
