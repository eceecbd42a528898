#include "povmap/survey_design.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

namespace povmap {

double VariableSelector::operator()(const PersonRecord& p) const {
  switch (kind) {
    case Kind::kPoor:
      return static_cast<double>(p.poor);
    case Kind::kScore:
      return p.scores(k);
    case Kind::kScorePair:
      return p.scores(k) + p.scores(k2);
  }
  return 0.0;
}

DirectEstimate weighted_mean_ultimate_cluster(std::span<const PersonRecord> persons,
                                              const std::function<double(const PersonRecord&)>& value) {
  if (persons.empty()) throw DataError("empty area sample");
  double wsum = 0.0;
  double wysum = 0.0;
  for (const auto& p : persons) {
    wsum += p.weight;
    wysum += p.weight * value(p);
  }
  DirectEstimate est;
  est.value = wysum / wsum;

  // Linearized ratio: PSU totals of w * (y - r) / W, areas acting as strata.
  std::map<std::string, std::map<std::string, double>> strata;
  for (const auto& p : persons) strata[p.area_id][p.psu_id] += p.weight * (value(p) - est.value) / wsum;

  std::size_t n_psu = 0;
  double grand = 0.0;
  for (const auto& [area, psus] : strata) {
    n_psu += psus.size();
    for (const auto& [id, t] : psus) grand += t;
  }
  if (n_psu < 2) {
    est.single_psu = true;
    est.se = 0.0;
    return est;
  }
  grand /= static_cast<double>(n_psu);

  double v = 0.0;
  for (const auto& [area, psus] : strata) {
    const auto n_h = static_cast<double>(psus.size());
    if (psus.size() == 1) {
      // lonely PSU: centred on the mean PSU total of the whole sample
      const double d = psus.begin()->second - grand;
      v += d * d;
      continue;
    }
    double mean_h = 0.0;
    for (const auto& [id, t] : psus) mean_h += t;
    mean_h /= n_h;
    double ss = 0.0;
    for (const auto& [id, t] : psus) ss += (t - mean_h) * (t - mean_h);
    v += n_h / (n_h - 1.0) * ss;
  }
  est.se = std::sqrt(v);
  return est;
}

DirectEstimate direct_proportion(std::span<const PersonRecord> persons) {
  if (persons.empty()) throw DataError("empty area sample");
  const auto& area = persons.front().area_id;
  for (const auto& p : persons) {
    if (p.area_id != area) throw DataError("direct_proportion: persons from more than one area");
    if (!(p.weight > 0.0)) throw DataError("direct_proportion: nonpositive weight for person " + p.person_id);
  }
  auto est = weighted_mean_ultimate_cluster(persons, [](const PersonRecord& p) { return double(p.poor); });
  est.value = std::clamp(est.value, 0.0, 1.0);
  return est;
}

double adjusted_sample_size(std::span<const double> household_sizes) {
  if (household_sizes.empty()) throw DataError("no households");
  double s = 0.0;
  double s2 = 0.0;
  for (double m : household_sizes) {
    if (!(m >= 1.0)) throw DataError("household size must be at least 1");
    s += m;
    s2 += m * m;
  }
  return s * s / s2;
}

std::vector<double> household_sizes(std::span<const PersonRecord> persons) {
  std::map<std::string, double> sizes;
  for (const auto& p : persons) sizes[p.area_id + '\x1f' + p.household_id] += 1.0;
  std::vector<double> out;
  out.reserve(sizes.size());
  for (const auto& [id, m] : sizes) out.push_back(m);
  return out;
}

namespace {

std::vector<PersonRecord> poor_subset(std::span<const PersonRecord> persons) {
  std::vector<PersonRecord> out;
  for (const auto& p : persons)
    if (p.poor == 1) out.push_back(p);
  return out;
}

// Unweighted sample variance with denominator n - 1.
double pooled_variance(std::span<const PersonRecord> persons, const VariableSelector& variable) {
  const auto n = static_cast<double>(persons.size());
  double mean = 0.0;
  for (const auto& p : persons) mean += variable(p);
  mean /= n;
  double ss = 0.0;
  for (const auto& p : persons) {
    const double d = variable(p) - mean;
    ss += d * d;
  }
  return ss / (n - 1.0);
}

}  // namespace

double design_effect(std::span<const PersonRecord> persons, const VariableSelector& variable) {
  std::vector<PersonRecord> storage;
  std::span<const PersonRecord> subset = persons;
  if (variable.poor_only()) {
    storage = poor_subset(persons);
    subset = storage;
    if (subset.size() < 2) throw DataError("insufficient data for pooling");
  }
  if (subset.empty()) throw DataError("empty sample");

  const auto est = weighted_mean_ultimate_cluster(subset, variable);
  if (est.single_psu) throw DataError("design effect needs at least two PSUs");
  const double n_tilde = adjusted_sample_size(household_sizes(subset));

  double srs_unit_var = 0.0;
  if (variable.kind == VariableSelector::Kind::kPoor) {
    srs_unit_var = est.value * (1.0 - est.value);
  } else {
    srs_unit_var = pooled_variance(subset, variable);
  }
  if (!(srs_unit_var > 0.0)) throw DataError("degenerate variable");
  const double v_design = est.se * est.se;
  const double deff = v_design / (srs_unit_var / n_tilde);
  if (!(deff > 0.0)) throw DataError("degenerate variable");
  return deff;
}

double smoothed_variance(double n_adjusted, double deff_poverty, double pooled_p) {
  if (!(n_adjusted > 0.0) || !(deff_poverty > 0.0))
    throw DataError("smoothed_variance: inputs must be positive");
  if (!(pooled_p > 0.0 && pooled_p < 1.0))
    throw DataError("smoothed_variance: pooled proportion must lie strictly inside (0, 1)");
  return pooled_p * (1.0 - pooled_p) * deff_poverty / n_adjusted;
}

std::optional<VectorXd> dimensional_direct(std::span<const PersonRecord> persons) {
  std::optional<VectorXd> acc;
  double wsum = 0.0;
  for (const auto& p : persons) {
    if (p.poor != 1) continue;
    if (!acc) acc = VectorXd::Zero(p.scores.size());
    *acc += p.weight * p.scores;
    wsum += p.weight;
  }
  if (!acc) return std::nullopt;
  *acc /= wsum;
  return acc;
}

DesignEffects pooled_design_effects(std::span<const PersonRecord> persons) {
  if (persons.empty()) throw DataError("empty sample");
  DesignEffects fx;
  fx.deff_poverty = design_effect(persons, VariableSelector::poor());
  fx.pooled_p = weighted_mean_ultimate_cluster(persons, VariableSelector::poor()).value;

  const auto K = static_cast<int>(persons.front().scores.size());
  const auto poor = poor_subset(persons);
  fx.poor_count = static_cast<int>(poor.size());
  fx.deff_dims = VectorXd::Zero(K);
  fx.pooled_s = VectorXd::Zero(K);
  fx.deff_pairs = MatrixXd::Zero(K, K);
  fx.pooled_s_pairs = MatrixXd::Zero(K, K);
  if (K == 0) return fx;
  if (poor.size() < 2) throw DataError("insufficient data for pooling");

  for (int k = 0; k < K; ++k) {
    fx.pooled_s(k) = pooled_variance(poor, VariableSelector::score(k));
    fx.deff_dims(k) = design_effect(poor, VariableSelector::score(k));
    fx.deff_pairs(k, k) = fx.deff_dims(k);
    fx.pooled_s_pairs(k, k) = 4.0 * fx.pooled_s(k);
  }
  for (int k = 0; k < K; ++k) {
    for (int k2 = k + 1; k2 < K; ++k2) {
      const auto sel = VariableSelector::score_pair(k, k2);
      fx.pooled_s_pairs(k, k2) = fx.pooled_s_pairs(k2, k) = pooled_variance(poor, sel);
      fx.deff_pairs(k, k2) = fx.deff_pairs(k2, k) = design_effect(poor, sel);
    }
  }
  return fx;
}

MatrixXd nearest_positive_definite(const MatrixXd& m) {
  const MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const VectorXd& ev = es.eigenvalues();
  const double floor = 1e-8 * std::max(ev.maxCoeff(), 0.0);
  if (ev.minCoeff() > floor) return sym;
  const VectorXd clipped = ev.cwiseMax(floor);
  MatrixXd out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

MatrixXd smoothed_covariance(const DesignEffects& fx, double n_adjusted) {
  if (!(n_adjusted > 0.0)) throw DataError("smoothed_covariance: adjusted sample size must be positive");
  if (fx.poor_count < 2) throw DataError("insufficient data for pooling");
  const auto K = fx.pooled_s.size();
  MatrixXd sigma(K, K);
  for (Eigen::Index k = 0; k < K; ++k) sigma(k, k) = fx.pooled_s(k) * fx.deff_dims(k) / n_adjusted;
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index k2 = k + 1; k2 < K; ++k2) {
      const double var_sum = fx.pooled_s_pairs(k, k2) * fx.deff_pairs(k, k2) / n_adjusted;
      sigma(k, k2) = sigma(k2, k) = 0.5 * (var_sum - sigma(k, k) - sigma(k2, k2));
    }
  }
  return nearest_positive_definite(sigma);
}

MatrixXd smoothed_covariance(std::span<const PersonRecord> all_poor, double n_adjusted) {
  const auto poor = poor_subset(all_poor);
  if (poor.size() < 2) throw DataError("insufficient data for pooling");
  const auto K = static_cast<int>(poor.front().scores.size());
  DesignEffects fx;
  fx.poor_count = static_cast<int>(poor.size());
  fx.pooled_s = VectorXd::Zero(K);
  fx.deff_dims = VectorXd::Zero(K);
  fx.pooled_s_pairs = MatrixXd::Zero(K, K);
  fx.deff_pairs = MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k) {
    fx.pooled_s(k) = pooled_variance(poor, VariableSelector::score(k));
    fx.deff_dims(k) = design_effect(poor, VariableSelector::score(k));
    for (int k2 = k + 1; k2 < K; ++k2) {
      const auto sel = VariableSelector::score_pair(k, k2);
      fx.pooled_s_pairs(k, k2) = fx.pooled_s_pairs(k2, k) = pooled_variance(poor, sel);
      fx.deff_pairs(k, k2) = fx.deff_pairs(k2, k) = design_effect(poor, sel);
    }
  }
  return smoothed_covariance(fx, n_adjusted);
}

void validate_persons(std::span<const PersonRecord> persons) {
  if (persons.empty()) throw DataError("persons table is empty");
  const auto K = persons.front().scores.size();
  std::unordered_map<std::string, int> household_status;
  for (const auto& p : persons) {
    const std::string who = "person " + p.person_id + " (area " + p.area_id + ")";
    if (!(p.weight > 0.0) || !std::isfinite(p.weight)) throw DataError(who + ": weight must be positive");
    if (p.poor != 0 && p.poor != 1) throw DataError(who + ": poor must be 0 or 1");
    if (p.scores.size() != K) throw DataError(who + ": inconsistent number of scores");
    for (Eigen::Index k = 0; k < p.scores.size(); ++k) {
      const double s = p.scores(k);
      if (!(s >= 0.0 && s <= 1.0)) throw DataError(who + ": score outside [0, 1]");
      if (p.poor == 0 && s != 0.0) throw DataError(who + ": non-poor person with nonzero score");
    }
    const auto [it, inserted] = household_status.emplace(p.area_id + '\x1f' + p.household_id, p.poor);
    if (!inserted && it->second != p.poor)
      throw DataError(who + ": household " + p.household_id + " has mixed poverty status");
  }
}

DesignSummaryTable summarize_design(std::span<const PersonRecord> persons) {
  validate_persons(persons);
  DesignSummaryTable table;
  table.K = static_cast<int>(persons.front().scores.size());
  table.effects = pooled_design_effects(persons);

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<PersonRecord>> by_area;
  for (const auto& p : persons) {
    auto [it, inserted] = by_area.try_emplace(p.area_id);
    if (inserted) order.push_back(p.area_id);
    it->second.push_back(p);
  }

  for (const auto& id : order) {
    const auto& rows = by_area.at(id);
    AreaDesignSummary s;
    s.area_id = id;
    const auto sizes = household_sizes(rows);
    s.n_households = static_cast<int>(sizes.size());
    s.n_adjusted = adjusted_sample_size(sizes);
    const auto direct = direct_proportion(rows);
    s.z_direct = direct.value;
    s.z_direct_se = direct.se;
    s.single_psu = direct.single_psu;
    s.D_smoothed = smoothed_variance(s.n_adjusted, table.effects.deff_poverty, table.effects.pooled_p);

    const auto poor = poor_subset(rows);
    if (!poor.empty() && table.K > 0) {
      const auto poor_sizes = household_sizes(poor);
      s.n_poor_households = static_cast<int>(poor_sizes.size());
      s.n_adjusted_poor = adjusted_sample_size(poor_sizes);
      s.y_direct = dimensional_direct(poor);
      s.sigma_hat = smoothed_covariance(table.effects, s.n_adjusted_poor);
    } else if (!poor.empty()) {
      const auto poor_sizes = household_sizes(poor);
      s.n_poor_households = static_cast<int>(poor_sizes.size());
      s.n_adjusted_poor = adjusted_sample_size(poor_sizes);
    }
    table.areas.push_back(std::move(s));
  }
  return table;
}

}  // namespace povmap
