#include "povmap/synthetic.hpp"

#include "povmap/hmc.hpp"
#include "povmap/model_core.hpp"

#include <fmt/format.h>

#include <random>
#include <set>

namespace povmap {

namespace {

struct GaussHermite {
  VectorXd nodes;
  VectorXd weights;  // sum to 1: expectation under N(0, 1)
};

// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
const GaussHermite& gauss_hermite() {
  static const GaussHermite rule = [] {
    constexpr int n = 64;
    MatrixXd J = MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
    GaussHermite gh;
    gh.nodes = es.eigenvalues();
    gh.weights = es.eigenvectors().row(0).transpose().array().square();
    gh.weights /= gh.weights.sum();
    return gh;
  }();
  return rule;
}

MatrixXd correlation_cholesky(const VectorXd& rho, int K) {
  if (rho.size() != correlation_count(K))
    throw UsageError(fmt::format("true_rho needs {} entries for K = {}", correlation_count(K), K));
  const auto corr = build_correlation(rho, K);
  if (!corr.is_pd) throw UsageError("invalid correlation: true_rho does not give a positive definite matrix");
  return Eigen::LLT<MatrixXd>(corr.R).matrixL();
}

}  // namespace

double logit_normal_mean(double location, double scale) {
  if (scale == 0.0) return inv_logit(location);
  const auto& gh = gauss_hermite();
  double acc = 0.0;
  for (Eigen::Index j = 0; j < gh.nodes.size(); ++j) acc += gh.weights(j) * inv_logit(location + scale * gh.nodes(j));
  return acc;
}

double logit_normal_location(double mean, double scale) {
  if (!(mean > 0.0 && mean < 1.0)) throw DataError("logit-normal mean must lie in (0, 1)");
  if (scale == 0.0) return logit(mean);
  double lo = -60.0;
  double hi = 60.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (logit_normal_mean(mid, scale) < mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void SimConfig::validate() const {
  if (m_areas < 1) throw UsageError("m_areas must be positive");
  if (K < 0) throw UsageError("K must be nonnegative");
  const auto p = static_cast<Eigen::Index>(covariates.size() + 1);
  if (true_gamma.size() != p) throw UsageError(fmt::format("true_gamma needs {} entries (intercept + covariates)", p));
  if (K > 0 && true_beta.size() != p) throw UsageError(fmt::format("true_beta needs {} entries (intercept + covariates)", p));
  if (!(true_sigma_v >= 0.0) || !(true_sigma >= 0.0)) throw UsageError("true standard deviations must be nonnegative");
  if (K > 1) correlation_cholesky(true_rho, K);
  if (households_per_area.empty()) {
    if (households_min < 1 || households_max < households_min) throw UsageError("households_per_area range is invalid");
  } else {
    if (static_cast<int>(households_per_area.size()) != m_areas)
      throw UsageError("households_per_area list needs one entry per area");
    for (int h : households_per_area)
      if (h < 1) throw UsageError("every area needs at least one household");
  }
  if (household_size_probs.empty() || household_size_probs.size() > 8)
    throw UsageError("household_size_probs needs between 1 and 8 entries (sizes 1..8)");
  double total = 0.0;
  for (double q : household_size_probs) {
    if (!(q >= 0.0)) throw UsageError("household_size_probs must be nonnegative");
    total += q;
  }
  if (!(total > 0.0)) throw UsageError("household_size_probs must not all be zero");
  if (psus_per_area < 1 || population_psus < 1) throw UsageError("PSU counts must be positive");
  if (psu_size_min < 1 || psu_size_max < psu_size_min) throw UsageError("PSU size range is invalid");
  if (!(intra_psu_corr >= 0.0 && intra_psu_corr < 1.0)) throw UsageError("intra_psu_corr must lie in [0, 1)");
  if (!(score_scale >= 0.0)) throw UsageError("score_scale must be nonnegative");
  if (districts < 1 || districts > m_areas) throw UsageError("districts must lie between 1 and m_areas");
}

SimulatedSurvey generate(const SimConfig& cfg, int replicate) {
  cfg.validate();
  // Separate streams: the population (covariates, truth, PSU frame) depends only on the seed,
  // the sample drawn from it also on the replicate index.
  std::mt19937_64 pop_rng = make_chain_rng(cfg.seed, 0, 0x51u);
  std::mt19937_64 rng = make_chain_rng(cfg.seed, replicate, 0x52u);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int m = cfg.m_areas;
  const int K = cfg.K;
  const auto p = static_cast<Eigen::Index>(cfg.covariates.size() + 1);
  const MatrixXd L = K > 0 ? correlation_cholesky(K > 1 ? cfg.true_rho : VectorXd(), K) : MatrixXd();

  SimulatedSurvey out;
  out.truth.pi.resize(m);
  out.truth.theta.resize(m, K);
  out.truth.eta.resize(m, K);
  for (const auto& c : cfg.covariates) out.areas.covariate_names.push_back(c.name);

  std::discrete_distribution<int> size_dist(cfg.household_size_probs.begin(), cfg.household_size_probs.end());
  double expected_size = 0.0;
  {
    double total = 0.0;
    for (std::size_t s = 0; s < cfg.household_size_probs.size(); ++s) {
      expected_size += static_cast<double>(s + 1) * cfg.household_size_probs[s];
      total += cfg.household_size_probs[s];
    }
    expected_size /= total;
  }
  const double tau = std::sqrt(kPi * kPi / 3.0 * cfg.intra_psu_corr / (1.0 - cfg.intra_psu_corr));

  struct Frame {
    std::vector<double> psu_sizes;
    double total_size = 0.0;
    int n_households = 0;
    VectorXd score_location;
  };
  std::vector<Frame> frames(m);

  for (int i = 0; i < m; ++i) {
    AreaRecord area;
    area.area_id = fmt::format("A{:02d}", i + 1);
    area.district_id = fmt::format("D{}", 1 + (i * cfg.districts) / m);
    VectorXd x(p);
    x(0) = 1.0;
    area.covariates.resize(p - 1);
    for (Eigen::Index j = 1; j < p; ++j) {
      const auto& cov = cfg.covariates[static_cast<std::size_t>(j - 1)];
      x(j) = cov.mean + cov.sd * normal(pop_rng);
      area.covariates(j - 1) = x(j);
    }
    out.truth.pi(i) = inv_logit(x.dot(cfg.true_gamma) + cfg.true_sigma_v * normal(pop_rng));
    out.truth.area_ids.push_back(area.area_id);

    Frame& f = frames[i];
    f.score_location.resize(K);
    if (K > 0) {
      VectorXd zv(K);
      for (int k = 0; k < K; ++k) zv(k) = normal(pop_rng);
      const VectorXd lambda = VectorXd::Constant(K, x.dot(cfg.true_beta)) + cfg.true_sigma * L * zv;
      const VectorXd theta = lambda.unaryExpr([](double v) { return inv_logit(v); });
      for (int k = 0; k < K; ++k) f.score_location(k) = logit_normal_location(theta(k), cfg.score_scale);
      out.truth.theta.row(i) = theta.transpose();
      out.truth.eta.row(i) = (theta / theta.sum()).transpose();
    }

    std::uniform_int_distribution<int> psu_size(cfg.psu_size_min, cfg.psu_size_max);
    f.psu_sizes.resize(cfg.population_psus);
    for (auto& s : f.psu_sizes) {
      s = psu_size(pop_rng);
      f.total_size += s;
    }
    area.population = f.total_size * expected_size;
    if (!cfg.households_per_area.empty()) {
      f.n_households = cfg.households_per_area[static_cast<std::size_t>(i)];
    } else {
      f.n_households = std::uniform_int_distribution<int>(cfg.households_min, cfg.households_max)(pop_rng);
    }
    out.areas.rows.push_back(std::move(area));
  }

  for (int i = 0; i < m; ++i) {
    const Frame& f = frames[i];
    const std::string& area_id = out.areas.rows[i].area_id;
    const int n_psu = std::min(cfg.psus_per_area, f.n_households);
    std::discrete_distribution<int> pps(f.psu_sizes.begin(), f.psu_sizes.end());
    std::vector<int> psu_draw(n_psu);
    for (auto& d : psu_draw) d = pps(rng);
    std::vector<int> per_psu(n_psu, 0);
    for (int h = 0; h < f.n_households; ++h) ++per_psu[h % n_psu];
    std::vector<double> tilt(n_psu);
    for (auto& t : tilt) t = tau * normal(rng);
    const double a_i = logit_normal_location(out.truth.pi(i), tau);

    for (int h = 0; h < f.n_households; ++h) {
      const int d = h % n_psu;
      const double weight = f.total_size / (static_cast<double>(n_psu) * per_psu[d]);
      const int hh_size = size_dist(rng) + 1;
      const int poor = unif(rng) < inv_logit(a_i + tilt[d]) ? 1 : 0;
      for (int j = 0; j < hh_size; ++j) {
        PersonRecord person;
        person.area_id = area_id;
        person.psu_id = fmt::format("P{}-{}", d + 1, psu_draw[d] + 1);
        person.household_id = fmt::format("H{:03d}", h + 1);
        person.person_id = fmt::format("{}-H{:03d}-{}", area_id, h + 1, j + 1);
        person.weight = weight;
        person.poor = poor;
        person.scores = VectorXd::Zero(K);
        if (poor == 1 && K > 0) {
          VectorXd e(K);
          for (int k = 0; k < K; ++k) e(k) = normal(rng);
          const VectorXd latent = f.score_location + cfg.score_scale * L * e;
          person.scores = latent.unaryExpr([](double v) { return inv_logit(v); });
        }
        out.persons.push_back(std::move(person));
      }
    }
  }
  return out;
}

nlohmann::json truth_to_json(const SimTruth& truth) {
  nlohmann::json areas = nlohmann::json::array();
  for (std::size_t i = 0; i < truth.area_ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    nlohmann::json a{{"area_id", truth.area_ids[i]}, {"pi", truth.pi(r)}};
    std::vector<double> theta(truth.theta.cols());
    std::vector<double> eta(truth.eta.cols());
    for (Eigen::Index k = 0; k < truth.theta.cols(); ++k) {
      theta[k] = truth.theta(r, k);
      eta[k] = truth.eta(r, k);
    }
    a["theta"] = theta;
    a["eta"] = eta;
    areas.push_back(a);
  }
  return {{"areas", areas}};
}

namespace {

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

SimConfig sim_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "m_areas",        "K",           "covariates",          "true_gamma",    "true_sigma_v",  "true_beta",
      "true_sigma",     "true_rho",    "households_per_area", "household_size_probs",
      "psus_per_area",  "population_psus", "psu_size",        "intra_psu_corr", "score_scale",  "districts",
      "seed"};
  if (!j.is_object()) throw UsageError("simulation config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw UsageError("unknown simulation config key '" + key + "'");
  SimConfig c;
  try {
    if (j.contains("m_areas")) c.m_areas = j["m_areas"].get<int>();
    if (j.contains("K")) c.K = j["K"].get<int>();
    if (j.contains("covariates")) {
      c.covariates.clear();
      for (const auto& cov : j["covariates"]) {
        for (const auto& [key, value] : cov.items())
          if (key != "name" && key != "mean" && key != "sd") throw UsageError("unknown covariate key '" + key + "'");
        c.covariates.push_back({cov.at("name").get<std::string>(), cov.value("mean", 0.0), cov.value("sd", 1.0)});
      }
    }
    if (j.contains("true_gamma")) c.true_gamma = from_json_vec(j["true_gamma"]);
    if (j.contains("true_sigma_v")) c.true_sigma_v = j["true_sigma_v"].get<double>();
    if (j.contains("true_beta")) c.true_beta = from_json_vec(j["true_beta"]);
    if (j.contains("true_sigma")) c.true_sigma = j["true_sigma"].get<double>();
    if (j.contains("true_rho")) c.true_rho = from_json_vec(j["true_rho"]);
    if (j.contains("households_per_area")) {
      const auto& h = j["households_per_area"];
      if (h.is_array()) {
        c.households_per_area = h.get<std::vector<int>>();
      } else {
        for (const auto& [key, value] : h.items())
          if (key != "min" && key != "max") throw UsageError("households_per_area accepts 'min' and 'max'");
        c.households_min = h.value("min", c.households_min);
        c.households_max = h.value("max", c.households_max);
      }
    }
    if (j.contains("household_size_probs")) c.household_size_probs = j["household_size_probs"].get<std::vector<double>>();
    if (j.contains("psus_per_area")) c.psus_per_area = j["psus_per_area"].get<int>();
    if (j.contains("population_psus")) c.population_psus = j["population_psus"].get<int>();
    if (j.contains("psu_size")) {
      c.psu_size_min = j["psu_size"].value("min", c.psu_size_min);
      c.psu_size_max = j["psu_size"].value("max", c.psu_size_max);
    }
    if (j.contains("intra_psu_corr")) c.intra_psu_corr = j["intra_psu_corr"].get<double>();
    if (j.contains("score_scale")) c.score_scale = j["score_scale"].get<double>();
    if (j.contains("districts")) c.districts = j["districts"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json sim_config_to_json(const SimConfig& c) {
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& cov : c.covariates) covs.push_back({{"name", cov.name}, {"mean", cov.mean}, {"sd", cov.sd}});
  nlohmann::json j{{"m_areas", c.m_areas},
                   {"K", c.K},
                   {"covariates", covs},
                   {"true_gamma", to_vec(c.true_gamma)},
                   {"true_sigma_v", c.true_sigma_v},
                   {"true_beta", to_vec(c.true_beta)},
                   {"true_sigma", c.true_sigma},
                   {"true_rho", to_vec(c.true_rho)},
                   {"household_size_probs", c.household_size_probs},
                   {"psus_per_area", c.psus_per_area},
                   {"population_psus", c.population_psus},
                   {"psu_size", {{"min", c.psu_size_min}, {"max", c.psu_size_max}}},
                   {"intra_psu_corr", c.intra_psu_corr},
                   {"score_scale", c.score_scale},
                   {"districts", c.districts},
                   {"seed", c.seed}};
  if (c.households_per_area.empty()) {
    j["households_per_area"] = {{"min", c.households_min}, {"max", c.households_max}};
  } else {
    j["households_per_area"] = c.households_per_area;
  }
  return j;
}

AreaLevelSimulation generate_area_level(const AreaLevelSimConfig& cfg) {
  const auto m = cfg.n_adjusted.size();
  if (m < 1) throw UsageError("area-level simulation needs at least one area");
  if (cfg.gamma.size() != 2) throw UsageError("area-level simulation uses an intercept and one covariate");
  std::mt19937_64 rng = make_chain_rng(cfg.seed, 0, 0xa7u);
  std::normal_distribution<double> normal(0.0, 1.0);
  AreaLevelSimulation sim;
  sim.X.resize(m, 2);
  sim.z.resize(m);
  sim.pi.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    sim.X(i, 0) = 1.0;
    sim.X(i, 1) = normal(rng);
    sim.pi(i) = inv_logit(sim.X.row(i).dot(cfg.gamma) + cfg.sigma_v * normal(rng));
    const double D = sim.pi(i) * (1.0 - sim.pi(i)) * cfg.deff / cfg.n_adjusted(i);
    sim.z(i) = sim.pi(i) + std::sqrt(D) * normal(rng);
  }
  return sim;
}

VectorXd survey_like_adjusted_sizes() {
  return (VectorXd(26) << 1.0, 2.0, 3.5, 5.2, 7.9, 8.6, 10.188, 12.3, 14.1, 15.7, 16.4, 18.2, 20.544, 22.8, 25.4,
          27.9, 30.6, 33.3, 36.0, 39.607, 42.5, 45.8, 50.2, 55.1, 58.7, 62.146)
      .finished();
}

}  // namespace povmap
