#pragma once

// Ground-truth synthetic surveys with a stratified two-stage design, for
// parameter recovery and coverage checks.
//
// Generative structure, per area i:
//   logit(pi_i)    = x_i' gamma + sigma_v * v_i,                 v_i ~ N(0, 1)
//   logit(theta_i) ~ MVN(x_i' beta 1_K, sigma^2 R(rho))
//   PSUs are drawn with probability proportional to size (with replacement) from
//   population_psus PSUs of uniform size in [psu_size_min, psu_size_max] households.
//   Household status ~ Bernoulli(inv_logit(a_i + u_c)), u_c ~ N(0, tau^2) shared by PSU c,
//   tau^2 = (pi^2 / 3) * icc / (1 - icc), and a_i solved so that E[status] = pi_i exactly.
//   Every member of a household shares its status.
//   Poor person scores: y_jk = inv_logit(b_ik + score_scale * e_jk), e_j ~ MVN(0, R(rho)),
//   with b_ik solved so that E[y_jk] = theta_ik exactly.
//   Household weight = T_i / (n_psu_i * h_c), with T_i the area's total size measure and h_c
//   the sampled households in PSU draw c.

#include "povmap/io.hpp"
#include "povmap/survey_design.hpp"
#include "povmap/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace povmap {

struct CovariateSpec {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
};

struct SimConfig {
  int m_areas = 26;
  int K = 3;
  std::vector<CovariateSpec> covariates{{"x1", 0.0, 1.0}};
  VectorXd true_gamma = (VectorXd(2) << 0.2, 0.4).finished();
  double true_sigma_v = 0.3;
  VectorXd true_beta = (VectorXd(2) << -1.0, 0.3).finished();
  double true_sigma = 0.4;
  VectorXd true_rho = (VectorXd(3) << 0.4, 0.3, 0.2).finished();
  int households_min = 1;
  int households_max = 75;
  std::vector<int> households_per_area;  // overrides min/max when non-empty
  std::vector<double> household_size_probs{0.06, 0.14, 0.22, 0.26, 0.17, 0.09, 0.04, 0.02};  // sizes 1..8
  int psus_per_area = 4;
  int population_psus = 40;
  int psu_size_min = 60;
  int psu_size_max = 180;
  double intra_psu_corr = 0.1;
  double score_scale = 0.5;
  int districts = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json sim_config_to_json(const SimConfig& cfg);

struct SimTruth {
  std::vector<std::string> area_ids;
  VectorXd pi;
  MatrixXd theta;  // m x K
  MatrixXd eta;    // m x K
};

struct SimulatedSurvey {
  std::vector<PersonRecord> persons;
  AreasTable areas;
  SimTruth truth;
};

/// Replicates share the population and truth (fixed by the seed) and redraw only the sample.
SimulatedSurvey generate(const SimConfig& config, int replicate = 0);

nlohmann::json truth_to_json(const SimTruth& truth);

/// Location b such that E[inv_logit(b + scale * Z)] = mean for Z ~ N(0, 1).
double logit_normal_location(double mean, double scale);

/// Expectation of inv_logit(b + scale * Z), Z ~ N(0, 1), by 64-point Gauss-Hermite quadrature.
double logit_normal_mean(double location, double scale);

// ---------------------------------------------------------------------------
// Area-level draws straight from the random-sampling-variance model:
//   logit(pi_i) = x_i' gamma + sigma_v v_i,  z_i ~ N(pi_i, pi_i (1 - pi_i) DEFF / n_tilde_i).

struct AreaLevelSimConfig {
  VectorXd n_adjusted;  // one entry per area
  double deff = 2.45;
  VectorXd gamma = (VectorXd(2) << 0.2, 0.4).finished();
  double sigma_v = 0.3;
  std::uint64_t seed = 1;
};

struct AreaLevelSimulation {
  MatrixXd X;  // intercept + one standard-normal covariate
  VectorXd z;
  VectorXd pi;
};

AreaLevelSimulation generate_area_level(const AreaLevelSimConfig& config);

/// A 26-area adjusted-size vector spanning the range seen in household surveys of this kind
/// (single-household areas up to roughly sixty adjusted persons).
VectorXd survey_like_adjusted_sizes();

}  // namespace povmap
