#pragma once

// Posterior summaries: area estimates, dimension contribution shares, sampling
// standard deviations, district aggregates and GeoJSON annotation.

#include "povmap/diagnostics.hpp"
#include "povmap/hmc.hpp"
#include "povmap/types.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace povmap {

/// Linear interpolation of order statistics (R type 7). `sorted` must be ascending.
double quantile_type7(const std::vector<double>& sorted, double prob);

inline const std::vector<double>& default_probabilities() {
  static const std::vector<double> probs{0.025, 0.15, 0.16, 0.5, 0.84, 0.85, 0.975};
  return probs;
}

struct AreaEstimate {
  std::string area_id;
  double mean = 0.0;
  double sd = 0.0;
  double mcse = 0.0;
  std::map<double, double> quantiles;
  std::optional<double> n_eff;
  std::optional<double> rhat;

  double q(double prob) const;
};

enum class Transform { kIdentity, kInvLogit };

/// Summary of one quantity given as a (draws x chains) matrix, after applying the transform per draw.
AreaEstimate summarize_quantity(const MatrixXd& chains, Transform transform = Transform::kIdentity,
                                const std::vector<double>& probs = default_probabilities());

/// One AreaEstimate per column index in `columns`, labelled with `ids`.
std::vector<AreaEstimate> summarize(const PosteriorDraws& draws, const std::vector<int>& columns,
                                    const std::vector<std::string>& ids, Transform transform = Transform::kIdentity,
                                    const std::vector<double>& probs = default_probabilities());

struct ContributionEstimate {
  std::string area_id;
  VectorXd shares;  // posterior means of eta_ik
  VectorXd share_se;
  std::vector<std::pair<double, double>> share_intervals;  // (2.5%, 97.5%)
};

/// eta^(r)_ik = theta^(r)_ik / sum_k theta^(r)_ik for one draw.
VectorXd contribution_shares(const VectorXd& theta);

/// theta_draws[i] holds area i's draws as an R x K matrix.
std::vector<ContributionEstimate> contributions(const std::vector<MatrixXd>& theta_draws,
                                                const std::vector<std::string>& ids);

/// Posterior of sqrt(pi (1 - pi) DEFF / n_tilde) for one area. pi_chains is draws x chains.
AreaEstimate sampling_sd_posterior(const MatrixXd& pi_chains, double n_adjusted, double deff,
                                   std::string area_id = {});

struct DistrictEstimate {
  std::string district_id;
  double estimate = 0.0;
  double se = 0.0;
  double q025 = 0.0;
  double q16 = 0.0;
  double q84 = 0.0;
  double q975 = 0.0;
  double direct = 0.0;
  double bm_ratio = 0.0;
};

/// area_draws is R x m (probability scale). Districts are reported in first-appearance order of district_map.
std::vector<DistrictEstimate> district_aggregate(const MatrixXd& area_draws, const std::vector<std::string>& area_ids,
                                                 const std::map<std::string, double>& populations,
                                                 const std::vector<std::string>& district_of_area,
                                                 const std::map<std::string, double>& district_direct);

struct MapRecord {
  std::string area_id;
  std::optional<double> estimate;
  std::optional<double> se;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<VectorXd> shares;
};

/// Names of the per-dimension share properties (MD_C, SD_C, HC_C for K = 3; D1_C, ... otherwise).
std::vector<std::string> share_property_names(int K);

/// Annotates every feature (matched on properties.area_id, or `key`) with estimate properties.
/// Unmatched features receive null values; `unmatched` collects their ids.
nlohmann::json emit_geojson(const std::vector<MapRecord>& records, const nlohmann::json& feature_collection,
                            const std::string& key = "area_id", std::vector<std::string>* unmatched = nullptr);

}  // namespace povmap
