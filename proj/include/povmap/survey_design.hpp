#pragma once

// Design-based quantities for person-level survey data: direct proportions,
// adjusted sample sizes, design effects and smoothed sampling (co)variances.

#include "povmap/types.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace povmap {

struct PersonRecord {
  std::string area_id;
  std::string psu_id;
  std::string household_id;
  std::string person_id;
  double weight = 1.0;
  int poor = 0;
  VectorXd scores;  // K dimensional scores, all zero when poor == 0
};

struct DirectEstimate {
  double value = 0.0;
  double se = 0.0;
  bool single_psu = false;  // se is reported as 0 when only one PSU was observed
};

struct DesignEffects {
  double deff_poverty = 1.0;
  VectorXd deff_dims;       // DEFF_k for each dimension, over poor respondents
  MatrixXd deff_pairs;      // DEFF of score_k + score_k' (diagonal equals deff_dims)
  double pooled_p = 0.5;    // overall weighted proportion poor
  VectorXd pooled_s;        // pooled (unweighted) variance of each score over poor respondents
  MatrixXd pooled_s_pairs;  // pooled variance of score_k + score_k' (diagonal is 4 * pooled_s)
  int poor_count = 0;
};

struct AreaDesignSummary {
  std::string area_id;
  int n_households = 0;
  int n_poor_households = 0;
  double n_adjusted = 0.0;       // over all households in the area
  double n_adjusted_poor = 0.0;  // over poor households only; scales the dimensional covariance
  double z_direct = 0.0;
  double z_direct_se = 0.0;
  bool single_psu = false;
  double D_smoothed = 0.0;
  std::optional<VectorXd> y_direct;
  std::optional<MatrixXd> sigma_hat;
};

struct DesignSummaryTable {
  std::vector<AreaDesignSummary> areas;
  DesignEffects effects;
  int K = 0;
};

/// Which variable a design-effect computation targets.
struct VariableSelector {
  enum class Kind { kPoor, kScore, kScorePair };
  Kind kind = Kind::kPoor;
  int k = 0;
  int k2 = 0;

  static VariableSelector poor() { return {}; }
  static VariableSelector score(int k) { return {Kind::kScore, k, k}; }
  static VariableSelector score_pair(int k, int k2) { return {Kind::kScorePair, k, k2}; }

  double operator()(const PersonRecord& p) const;
  bool poor_only() const { return kind != Kind::kPoor; }
};

/// Weighted ratio estimate sum(w*y)/sum(w) together with its with-replacement
/// ultimate-cluster standard error. Areas are strata and psu_id names PSUs within an area; an area
/// with a single PSU is centred on the mean PSU total of the whole sample.
DirectEstimate weighted_mean_ultimate_cluster(std::span<const PersonRecord> persons,
                                              const std::function<double(const PersonRecord&)>& value);

DirectEstimate direct_proportion(std::span<const PersonRecord> persons);

/// (sum m_h)^2 / sum m_h^2
double adjusted_sample_size(std::span<const double> household_sizes);

/// Household sizes of the given persons, one entry per distinct (area, household) pair.
std::vector<double> household_sizes(std::span<const PersonRecord> persons);

double design_effect(std::span<const PersonRecord> persons, const VariableSelector& variable);

double smoothed_variance(double n_adjusted, double deff_poverty, double pooled_p);

std::optional<VectorXd> dimensional_direct(std::span<const PersonRecord> persons);

/// Pooled inputs for every smoothing step, computed once from the whole sample.
DesignEffects pooled_design_effects(std::span<const PersonRecord> persons);

MatrixXd smoothed_covariance(const DesignEffects& effects, double n_adjusted);

/// Convenience overload computing the pooled inputs from all poor respondents.
MatrixXd smoothed_covariance(std::span<const PersonRecord> all_poor, double n_adjusted);

/// Clips eigenvalues below 1e-8 * max eigenvalue and re-symmetrizes.
MatrixXd nearest_positive_definite(const MatrixXd& m);

/// Full per-area table. Areas are reported in first-appearance order.
DesignSummaryTable summarize_design(std::span<const PersonRecord> persons);

void validate_persons(std::span<const PersonRecord> persons);

}  // namespace povmap
