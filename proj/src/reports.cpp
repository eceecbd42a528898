#include "povmap/reports.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace povmap {

double quantile_type7(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

double AreaEstimate::q(double prob) const {
  const auto it = quantiles.find(prob);
  if (it == quantiles.end()) throw DataError(fmt::format("quantile {} was not computed", prob));
  return it->second;
}

namespace {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return m;
}

}  // namespace

AreaEstimate summarize_quantity(const MatrixXd& chains, Transform transform, const std::vector<double>& probs) {
  if (chains.size() == 0) throw DataError("summarize: no draws");
  MatrixXd values = chains;
  if (transform == Transform::kInvLogit) values = chains.unaryExpr([](double x) { return inv_logit(x); });

  AreaEstimate est;
  const auto diag = diagnose(values);
  est.mean = diag.mean;
  est.sd = diag.sd;
  est.mcse = diag.mcse;
  est.rhat = diag.rhat;
  est.n_eff = diag.ess;
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  for (double p : probs) est.quantiles[p] = quantile_type7(sorted, p);
  return est;
}

std::vector<AreaEstimate> summarize(const PosteriorDraws& draws, const std::vector<int>& columns,
                                    const std::vector<std::string>& ids, Transform transform,
                                    const std::vector<double>& probs) {
  if (ids.size() != columns.size()) throw DataError("summarize: one id per column required");
  std::vector<AreaEstimate> out;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    auto est = summarize_quantity(draws.parameter(columns[j]), transform, probs);
    est.area_id = ids[j];
    out.push_back(std::move(est));
  }
  return out;
}

VectorXd contribution_shares(const VectorXd& theta) {
  if (!(theta.array() > 0.0).all() || !theta.allFinite()) throw DataError("invalid theta draw");
  return theta / theta.sum();
}

std::vector<ContributionEstimate> contributions(const std::vector<MatrixXd>& theta_draws,
                                                const std::vector<std::string>& ids) {
  if (ids.size() != theta_draws.size()) throw DataError("contributions: one id per area required");
  std::vector<ContributionEstimate> out;
  for (std::size_t i = 0; i < theta_draws.size(); ++i) {
    const MatrixXd& th = theta_draws[i];
    const auto R = th.rows();
    const auto K = th.cols();
    MatrixXd eta(R, K);
    for (Eigen::Index r = 0; r < R; ++r) eta.row(r) = contribution_shares(th.row(r).transpose()).transpose();

    ContributionEstimate c;
    c.area_id = ids[i];
    c.shares.resize(K);
    c.share_se.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      std::vector<double> col(eta.col(k).data(), eta.col(k).data() + R);
      const auto mom = moments(col);
      c.shares(k) = mom.mean;
      c.share_se(k) = mom.sd;
      std::sort(col.begin(), col.end());
      c.share_intervals.emplace_back(quantile_type7(col, 0.025), quantile_type7(col, 0.975));
    }
    out.push_back(std::move(c));
  }
  return out;
}

AreaEstimate sampling_sd_posterior(const MatrixXd& pi_chains, double n_adjusted, double deff, std::string area_id) {
  if (!(n_adjusted > 0.0) || !(deff > 0.0)) throw DataError("sampling_sd_posterior: n_adjusted and DEFF must be positive");
  const MatrixXd sd = pi_chains.unaryExpr([&](double p) { return std::sqrt(p * (1.0 - p) * deff / n_adjusted); });
  auto est = summarize_quantity(sd);
  est.area_id = std::move(area_id);
  return est;
}

std::vector<DistrictEstimate> district_aggregate(const MatrixXd& area_draws, const std::vector<std::string>& area_ids,
                                                 const std::map<std::string, double>& populations,
                                                 const std::vector<std::string>& district_of_area,
                                                 const std::map<std::string, double>& district_direct) {
  const auto m = static_cast<std::size_t>(area_draws.cols());
  if (area_ids.size() != m || district_of_area.size() != m)
    throw DataError("district_aggregate: one id and one district per area column required");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < m; ++i) {
    auto [it, inserted] = members.try_emplace(district_of_area[i]);
    if (inserted) order.push_back(district_of_area[i]);
    it->second.push_back(i);
  }

  std::vector<DistrictEstimate> out;
  for (const auto& d : order) {
    VectorXd weights(static_cast<Eigen::Index>(members[d].size()));
    MatrixXd sub(area_draws.rows(), weights.size());
    for (std::size_t j = 0; j < members[d].size(); ++j) {
      const auto i = members[d][j];
      const auto pop = populations.find(area_ids[i]);
      if (pop == populations.end()) throw DataError("missing population for area " + area_ids[i]);
      if (!(pop->second > 0.0)) throw DataError("population must be positive for area " + area_ids[i]);
      weights(static_cast<Eigen::Index>(j)) = pop->second;
      sub.col(static_cast<Eigen::Index>(j)) = area_draws.col(static_cast<Eigen::Index>(i));
    }
    const VectorXd pi_d = sub * weights / weights.sum();

    DistrictEstimate est;
    est.district_id = d;
    std::vector<double> v(pi_d.data(), pi_d.data() + pi_d.size());
    const auto mom = moments(v);
    est.estimate = mom.mean;
    est.se = mom.sd;
    std::sort(v.begin(), v.end());
    est.q025 = quantile_type7(v, 0.025);
    est.q16 = quantile_type7(v, 0.16);
    est.q84 = quantile_type7(v, 0.84);
    est.q975 = quantile_type7(v, 0.975);
    const auto direct = district_direct.find(d);
    if (direct == district_direct.end()) throw DataError("missing direct estimate for district " + d);
    if (!(direct->second > 0.0)) throw DataError("direct estimate for district " + d + " must be positive");
    est.direct = direct->second;
    est.bm_ratio = est.estimate / est.direct;
    out.push_back(est);
  }
  return out;
}

std::vector<std::string> share_property_names(int K) {
  if (K == 3) return {"MD_C", "SD_C", "HC_C"};
  std::vector<std::string> names;
  for (int k = 0; k < K; ++k) names.push_back(fmt::format("D{}_C", k + 1));
  return names;
}

nlohmann::json emit_geojson(const std::vector<MapRecord>& records, const nlohmann::json& fc, const std::string& key,
                            std::vector<std::string>* unmatched) {
  if (!fc.is_object() || fc.value("type", "") != "FeatureCollection" || !fc.contains("features") ||
      !fc["features"].is_array())
    throw DataError("GeoJSON input is not a FeatureCollection");

  int K = 0;
  std::unordered_map<std::string, const MapRecord*> by_id;
  for (const auto& r : records) {
    by_id[r.area_id] = &r;
    if (r.shares) K = std::max(K, static_cast<int>(r.shares->size()));
  }
  const auto share_names = share_property_names(K);

  nlohmann::json out = fc;
  for (auto& feature : out["features"]) {
    if (!feature.is_object() || feature.value("type", "") != "Feature")
      throw DataError("GeoJSON feature collection contains a non-Feature entry");
    if (!feature.contains("properties") || feature["properties"].is_null()) feature["properties"] = nlohmann::json::object();
    auto& props = feature["properties"];
    if (!props.is_object()) throw DataError("GeoJSON feature properties must be an object");

    std::string id;
    if (props.contains(key)) {
      const auto& v = props[key];
      id = v.is_string() ? v.get<std::string>() : v.dump();
    }
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      for (const char* name : {"estimate", "se", "ci_low", "ci_high"}) props[name] = nullptr;
      for (const auto& s : share_names) props[s] = nullptr;
      if (unmatched) unmatched->push_back(id);
      continue;
    }
    const MapRecord& r = *it->second;
    auto put = [&props](const char* name, const std::optional<double>& v) {
      if (v) {
        props[name] = *v;
      } else {
        props[name] = nullptr;
      }
    };
    put("estimate", r.estimate);
    put("se", r.se);
    put("ci_low", r.ci_low);
    put("ci_high", r.ci_high);
    for (int k = 0; k < K; ++k) {
      if (r.shares && k < r.shares->size()) {
        props[share_names[k]] = (*r.shares)(k);
      } else {
        props[share_names[k]] = nullptr;
      }
    }
  }
  return out;
}

}  // namespace povmap
