// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "povmap/diagnostics.hpp"
#include "povmap/hmc.hpp"
#include "povmap/io.hpp"
#include "povmap/model_core.hpp"
#include "povmap/psis.hpp"
#include "povmap/reports.hpp"
#include "povmap/survey_design.hpp"
#include "povmap/synthetic.hpp"

#include "cli_runner.hpp"
#include "conjugate_oracle.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace povmap;
using namespace povmap::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Household-level Bernoulli superpopulation: every member shares the household's status.
// Exact variance of the person-level proportion by enumerating all 2^n outcomes.
double brute_force_adjusted_size(const std::vector<double>& sizes, double p) {
  const int n = static_cast<int>(sizes.size());
  double total = 0.0;
  for (double s : sizes) total += s;
  std::vector<double> prob(std::size_t{1} << n), est(std::size_t{1} << n);
  double mean = 0.0;
  for (std::size_t mask = 0; mask < prob.size(); ++mask) {
    double pr = 1.0;
    double poor = 0.0;
    for (int h = 0; h < n; ++h) {
      if (mask & (std::size_t{1} << h)) {
        pr *= p;
        poor += sizes[static_cast<std::size_t>(h)];
      } else {
        pr *= 1.0 - p;
      }
    }
    prob[mask] = pr;
    est[mask] = poor / total;
    mean += pr * est[mask];
  }
  double var = 0.0;
  for (std::size_t mask = 0; mask < prob.size(); ++mask) var += prob[mask] * (est[mask] - mean) * (est[mask] - mean);
  return p * (1.0 - p) / var;
}

Outcome criterion1() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> count(1, 10), size(1, 8);
  std::bernoulli_distribution equal_sizes(0.2);
  double worst = 0.0;
  int bound_violations = 0;
  int equality_mismatches = 0;
  double impl_seconds = 0.0;
  for (int r = 0; r < 10000; ++r) {
    const int n = count(rng);
    std::vector<double> sizes(static_cast<std::size_t>(n));
    if (equal_sizes(rng)) {
      std::fill(sizes.begin(), sizes.end(), static_cast<double>(size(rng)));
    } else {
      for (auto& s : sizes) s = size(rng);
    }
    const auto t0 = Clock::now();
    const double nt = adjusted_sample_size(sizes);
    impl_seconds += seconds_since(t0);
    worst = std::max(worst, std::abs(nt - brute_force_adjusted_size(sizes, 0.3)));
    if (nt > n + 1e-12) ++bound_violations;
    const bool all_equal = std::all_of(sizes.begin(), sizes.end(), [&](double s) { return s == sizes.front(); });
    if (all_equal != (std::abs(nt - n) <= 1e-12)) ++equality_mismatches;
  }
  return {worst <= 1e-12 && bound_violations == 0 && equality_mismatches == 0 && impl_seconds < 1.0,
          fmt::format("max |n_tilde - brute force| {:.2e}, bound violations {}, equality mismatches {}, {:.4f} s",
                      worst, bound_violations, equality_mismatches, impl_seconds)};
}

Outcome criterion2() {
  // c = p (1 - p) DEFF = 0.611
  const double p = 0.56;
  const double deff = 0.611 / (p * (1.0 - p));
  const std::vector<double> sizes{1.0, 2.0, 10.188, 16.4, 20.544, 39.607, 62.146};
  const std::vector<double> expected{0.783, 0.554, 0.245, 0.193, 0.173, 0.124, 0.099};
  double table_err = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i)
    table_err = std::max(table_err, std::abs(std::sqrt(smoothed_variance(sizes[i], deff, p)) - expected[i]));

  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(1.0, 80.0);
  const double c2 = smoothed_variance(1.0, deff, p);
  double product_err = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const double nt = u(rng);
    product_err = std::max(product_err, std::abs(smoothed_variance(nt, deff, p) * nt - c2));
  }
  return {product_err <= 1e-12 && table_err <= 0.003,
          fmt::format("max |D n_tilde - c^2| {:.2e}, max sqrt(D) table error {:.4f}", product_err, table_err)};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::string parts;
  for (auto family : {ModelFamily::kFH, ModelFamily::kNL, ModelFamily::kNLRS, ModelFamily::kNLPlugin}) {
    const AreaLevelData d = random_area_data(rng, 8, 3);
    UnivariateModel model(family, d);
    std::vector<VectorXd> points;
    for (int r = 0; r < 100; ++r) points.push_back(random_univariate_point(rng, family, 8, 3));
    const double e = gradient_check([&](const VectorXd& q) { return model.log_density(q); }, points).max_rel_error;
    worst = std::max(worst, e);
    parts += fmt::format("{} {:.1e}, ", to_string(family), e);
  }
  const auto d = random_mv_data(rng, 6, 3, 2, true);
  MultivariateLogitModel mv(d);
  std::vector<VectorXd> points;
  for (int r = 0; r < 100; ++r) points.push_back(random_mv_point(rng, mv));
  const double e = gradient_check([&](const VectorXd& q) { return mv.log_density(q); }, points).max_rel_error;
  worst = std::max(worst, e);
  parts += fmt::format("MV_LOGIT {:.1e}", e);
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 30.0, fmt::format("{}; {:.2f} s", parts, secs)};
}

Outcome criterion4() {
  const int dim = 10;
  std::mt19937_64 rng(404);
  std::normal_distribution<double> n01;
  MatrixXd A(dim, dim);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) A(a, b) = n01(rng);
  MatrixXd cov = A * A.transpose() / dim + 0.2 * MatrixXd::Identity(dim, dim);
  VectorXd scales(dim);
  for (int a = 0; a < dim; ++a) scales(a) = std::pow(10.0, -1.0 + 2.0 * a / (dim - 1));
  cov = scales.asDiagonal() * cov * scales.asDiagonal();
  VectorXd mu(dim);
  for (int a = 0; a < dim; ++a) mu(a) = 3.0 * n01(rng);
  const MatrixXd prec = cov.inverse();

  const LogDensityFn target = [&](const VectorXd& q) {
    const VectorXd r = q - mu;
    LogDensityResult res;
    res.gradient = -prec * r;
    res.value = 0.5 * r.dot(res.gradient);
    return res;
  };
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 4000;
  cfg.warmup = 2000;
  cfg.seed = 4040;
  const auto t0 = Clock::now();
  const auto draws = sample(target, dim, cfg);
  const double secs = seconds_since(t0);

  double worst_z = 0.0;
  double worst_rhat = 0.0;
  for (int a = 0; a < dim; ++a) {
    const auto diag = diagnose(draws.parameter(a));
    worst_z = std::max(worst_z, std::abs(diag.mean - mu(a)) / diag.mcse);
    worst_rhat = std::max(worst_rhat, diag.rhat.value_or(INFINITY));
  }
  const int div = draws.total_divergences();
  return {worst_z <= 3.0 && worst_rhat < 1.01 && div == 0 && secs < 60.0,
          fmt::format("max |mean - mu| / MCSE {:.2f}, max R-hat {:.4f}, divergences {}, {:.1f} s", worst_z, worst_rhat,
                      div, secs)};
}

// Shared NL_RS replications for criteria 5 and 9.
struct ReplicationSummary {
  double coverage = 0.0;
  Eigen::Vector2d gamma_bias = Eigen::Vector2d::Zero();
  int divergences = 0;
  int bm_within = 0;
  int bm_total = 0;
  double seconds = 0.0;
};

ReplicationSummary nl_rs_replications(int reps) {
  const auto t0 = Clock::now();
  ReplicationSummary s;
  const VectorXd sizes = survey_like_adjusted_sizes();
  const int m = static_cast<int>(sizes.size());
  std::vector<std::string> ids, district_of;
  std::map<std::string, double> populations;
  for (int i = 0; i < m; ++i) {
    ids.push_back(fmt::format("a{}", i));
    district_of.push_back(i % 2 == 0 ? "even" : "odd");
    // self-weighting design: population proportional to the adjusted sample size
    populations[ids.back()] = 100.0 * sizes(i);
  }
  int covered = 0;
  int cells = 0;
  for (int r = 0; r < reps; ++r) {
    AreaLevelSimConfig sc;
    sc.n_adjusted = sizes;
    sc.seed = 1000 + static_cast<std::uint64_t>(r);
    const auto sim = generate_area_level(sc);
    AreaLevelData d;
    d.z = sim.z;
    d.n_adjusted = sizes;
    d.deff = sc.deff;
    d.X = sim.X;
    UnivariateModel model(ModelFamily::kNLRS, d);
    SamplerConfig cfg;
    cfg.chains = 4;
    cfg.iterations = 2000;
    cfg.warmup = 1000;
    cfg.seed = 77 + static_cast<std::uint64_t>(r);
    const auto draws = sample(model, cfg);
    s.divergences += draws.total_divergences();
    const MatrixXd all = draws.map([&](const VectorXd& q) { return model.outputs(q); }, model.output_names()).stacked();
    const int p = model.coefficients();
    s.gamma_bias(0) += all.col(0).mean() - sc.gamma(0);
    s.gamma_bias(1) += all.col(1).mean() - sc.gamma(1);
    MatrixXd pi_draws(all.rows(), m);
    for (int i = 0; i < m; ++i) {
      pi_draws.col(i) = all.col(p + 1 + i);
      std::vector<double> v(pi_draws.col(i).data(), pi_draws.col(i).data() + all.rows());
      std::sort(v.begin(), v.end());
      covered += sim.pi(i) >= quantile_type7(v, 0.025) && sim.pi(i) <= quantile_type7(v, 0.975);
      ++cells;
    }
    std::map<std::string, double> num, den, direct;
    for (int i = 0; i < m; ++i) {
      num[district_of[static_cast<std::size_t>(i)]] += populations[ids[static_cast<std::size_t>(i)]] * sim.z(i);
      den[district_of[static_cast<std::size_t>(i)]] += populations[ids[static_cast<std::size_t>(i)]];
    }
    for (const auto& [k, v] : num) direct[k] = v / den[k];
    for (const auto& de : district_aggregate(pi_draws, ids, populations, district_of, direct)) {
      s.bm_within += de.bm_ratio >= 0.9 && de.bm_ratio <= 1.1;
      ++s.bm_total;
    }
  }
  s.coverage = static_cast<double>(covered) / cells;
  s.gamma_bias /= reps;
  s.seconds = seconds_since(t0);
  return s;
}

Outcome criterion5(const ReplicationSummary& s) {
  return {s.coverage >= 0.93 && s.coverage <= 0.97 && s.gamma_bias.cwiseAbs().maxCoeff() < 0.05 && s.seconds < 1800.0,
          fmt::format("coverage {:.4f}, gamma bias ({:.4f}, {:.4f}), divergences {}, {:.0f} s", s.coverage,
                      s.gamma_bias(0), s.gamma_bias(1), s.divergences, s.seconds)};
}

Outcome criterion6() {
  // K = 1 reduces exactly to NL.
  std::mt19937_64 rng(606);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int m = 7;
    auto mv = random_mv_data(rng, m, 1, 2, false);
    mv.y[1] = vec({0.4});
    mv.sigma[1] = MatrixXd::Constant(1, 1, 0.02);
    AreaLevelData nl;
    nl.X = MatrixXd(m, 2);
    nl.z.resize(m);
    nl.D.resize(m);
    for (int i = 0; i < m; ++i) {
      nl.X.row(i) = mv.X[static_cast<std::size_t>(i)].row(0);
      nl.z(i) = (*mv.y[static_cast<std::size_t>(i)])(0);
      nl.D(i) = (*mv.sigma[static_cast<std::size_t>(i)])(0, 0);
    }
    MultivariateLogitModel model(mv);
    const VectorXd q = random_mv_point(rng, model);
    const auto a = model.log_density(q);
    const auto b = logpost_nl(q, nl);
    worst = std::max({worst, std::abs(a.value - b.value), (a.gradient - b.gradient).cwiseAbs().maxCoeff()});
  }

  // Diagonal Sigma with R = I against the stacked NL fit with the same block design, 10 areas.
  const int m = 10;
  const int K = 2;
  std::normal_distribution<double> n01;
  MatrixXd cov = MatrixXd::Ones(m, 2);
  for (int i = 0; i < m; ++i) cov(i, 1) = n01(rng);
  MultivariateData mvd;
  mvd.K = K;
  mvd.X = make_mv_design(cov, K, true);
  const VectorXd beta = vec({-0.8, 0.5, 0.3, -0.4});
  AreaLevelData stacked;
  stacked.z.resize(m * K);
  stacked.D.resize(m * K);
  stacked.X.resize(m * K, 2 * K);
  for (int i = 0; i < m; ++i) {
    const auto& Xi = mvd.X[static_cast<std::size_t>(i)];
    const VectorXd theta = (Xi * beta + 0.4 * VectorXd::NullaryExpr(K, [&](Eigen::Index) { return n01(rng); }))
                               .unaryExpr([](double x) { return inv_logit(x); });
    VectorXd var(K);
    for (int k = 0; k < K; ++k) var(k) = 0.002 + 0.01 * std::abs(n01(rng));
    const VectorXd y = theta + var.cwiseSqrt().cwiseProduct(VectorXd::NullaryExpr(K, [&](Eigen::Index) { return n01(rng); }));
    mvd.y.emplace_back(y);
    mvd.sigma.emplace_back(MatrixXd(var.asDiagonal()));
    for (int k = 0; k < K; ++k) {
      stacked.z(i * K + k) = y(k);
      stacked.D(i * K + k) = var(k);
      stacked.X.row(i * K + k) = Xi.row(k);
    }
  }
  Priors pr;
  pr.zero_correlation = true;
  MultivariateLogitModel mv_model(mvd, pr);
  UnivariateModel nl_model(ModelFamily::kNL, stacked);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 3000;
  cfg.warmup = 1000;
  cfg.seed = 6061;
  const auto mv_draws = sample(mv_model, cfg).map([&](const VectorXd& q) { return mv_model.outputs(q); },
                                                  mv_model.output_names());
  cfg.seed = 6062;
  const auto nl_draws = sample(nl_model, cfg).map([&](const VectorXd& q) { return nl_model.outputs(q); },
                                                  nl_model.output_names());
  // both parameter vectors are (coefficients, scale, area-major theta)
  int outside = 0;
  double worst_ratio = 0.0;
  const int n_out = mv_draws.dim();
  for (int j = 0; j < n_out; ++j) {
    const auto a = diagnose(mv_draws.parameter(j));
    const auto b = diagnose(nl_draws.parameter(j));
    const double ratio = std::abs(a.mean - b.mean) / (2.0 * a.mcse + 2.0 * b.mcse);
    worst_ratio = std::max(worst_ratio, ratio);
    outside += ratio > 1.0;
  }
  return {worst <= 1e-10 && outside == 0,
          fmt::format("K = 1 max difference {:.1e} over 50 datasets; diagonal MV vs stacked NL: {} of {} quantities "
                      "outside the 2 MCSE bands (max |diff| / (2 MCSE_mv + 2 MCSE_nl) {:.2f})",
                      worst, outside, n_out, worst_ratio)};
}

// One small pipeline run shared by criteria 7, 10 and 11.
struct Pipeline {
  fs::path root;
  fs::path survey;
  bool ok = false;
  std::string log;
};

bool run_step(Pipeline& pl, const std::string& args) {
  const auto r = run_cli(args);
  if (r.exit_code != 0) pl.log += fmt::format("`povmap {}` exited {}: {}\n", args, r.exit_code, r.output);
  return r.exit_code == 0;
}

std::vector<std::string> pipeline_commands(const Pipeline& pl, const fs::path& out, const fs::path& persons) {
  const auto areas = (pl.survey / "areas.csv").string();
  const auto o = [&](const char* name) { return (out / name).string(); };
  const auto fit = [&](const char* family, const char* dir) {
    return fmt::format("fit --design {} --areas {} --family {} --iter 1000 --warmup 500 --seed 11 --out {}", o("direct"),
                       areas, family, o(dir));
  };
  return {
      fmt::format("direct --persons {} --areas {} --out {}", persons.string(), areas, o("direct")),
      fit("NL_RS", "fit_rs"),
      fit("FH", "fit_fh"),
      fit("MV_LOGIT", "fit_mv"),
      fmt::format("compare {} {} --out {}", o("fit_rs"), o("fit_fh"), o("compare")),
      fmt::format("report --fit {} --mv-fit {} --areas {} --persons {} --out {}", o("fit_rs"), o("fit_mv"), areas,
                  persons.string(), o("report")),
  };
}

Pipeline build_pipeline() {
  Pipeline pl;
  pl.root = scratch_dir("acceptance");
  {
    std::ofstream(pl.root / "sim.json") << R"({"m_areas": 10, "districts": 2, "households_per_area": {"min": 8, "max": 40}})";
  }
  pl.survey = pl.root / "sim";
  if (!run_step(pl, fmt::format("simulate --config {} --seed 21 --out {}", (pl.root / "sim.json").string(),
                                pl.survey.string())))
    return pl;
  // A01 keeps a single sampled household, none of whose members is poor.
  std::vector<PersonRecord> persons;
  std::string kept_household;
  for (auto p : read_persons(pl.survey / "persons.csv")) {
    if (p.area_id == "A01") {
      if (kept_household.empty()) kept_household = p.household_id;
      if (p.household_id != kept_household) continue;
      p.poor = 0;
      p.scores.setZero();
    }
    persons.push_back(std::move(p));
  }
  write_persons(pl.root / "persons.csv", persons);
  for (const auto& cmd : pipeline_commands(pl, pl.root / "a", pl.root / "persons.csv"))
    if (!run_step(pl, cmd)) return pl;
  pl.ok = true;
  return pl;
}

Outcome criterion7(const Pipeline& pl) {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(1e-4, 1.0), scale(1e-3, 1e3);
  double sum_err = 0.0;
  double rescale_err = 0.0;
  std::vector<MatrixXd> theta(5, MatrixXd(1000, 3));
  for (auto& t : theta)
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (int k = 0; k < 3; ++k) t(r, k) = u(rng);
      const VectorXd eta = contribution_shares(t.row(r).transpose());
      sum_err = std::max(sum_err, std::abs(eta.sum() - 1.0));
      const VectorXd eta_c = contribution_shares(scale(rng) * t.row(r).transpose());
      rescale_err = std::max(rescale_err, (eta - eta_c).cwiseAbs().maxCoeff());
    }
  for (const auto& c : contributions(theta, {"a", "b", "c", "d", "e"}))
    sum_err = std::max(sum_err, std::abs(c.shares.sum() - 1.0));
  const double tabled_row = std::abs(0.242 + 0.470 + 0.288 - 1.0);

  double emitted_err = INFINITY;
  std::size_t rows = 0;
  if (pl.ok) {
    const auto table = read_csv(pl.root / "a" / "report" / "contributions.csv");
    emitted_err = 0.0;
    for (const auto& row : table.rows) {
      double s = 0.0;
      for (const char* col : {"md", "sd", "hc"}) s += std::stod(row[table.column(col, "contributions.csv")]);
      emitted_err = std::max(emitted_err, std::abs(s - 1.0));
    }
    rows = table.rows.size();
  }
  return {sum_err <= 1e-12 && rescale_err <= 1e-12 && tabled_row <= 1e-12 && emitted_err <= 1e-12 && rows > 0,
          fmt::format("draw sums {:.1e}, rescaling {:.1e}, 0.242 + 0.470 + 0.288 - 1 = {:.1e}, emitted rows {} max "
                      "error {:.1e}",
                      sum_err, rescale_err, tabled_row, rows, emitted_err)};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  int within = 0;
  int bad_k = 0;
  for (int r = 0; r < 50; ++r) {
    const auto prob = conjugate_problem(8000 + static_cast<std::uint64_t>(r));
    const auto loo = elpd_loo(prob.loglik);
    within += std::abs(loo.elpd_loo - prob.exact_elpd) <= 2.0 * loo.se_elpd;
    bad_k += (loo.pareto_k.array() >= kParetoKWarning).count();
  }
  const double secs = seconds_since(t0);
  return {within >= 45 && bad_k == 0 && secs < 120.0,
          fmt::format("{} of 50 within 2 SE of the exact LOO, {} k-hat >= 0.7, {:.1f} s", within, bad_k, secs)};
}

Outcome criterion9(const ReplicationSummary& s) {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(0.05, 0.6), pop(100.0, 5000.0);
  const int m = 12;
  MatrixXd draws(400, m);
  for (Eigen::Index r = 0; r < draws.rows(); ++r)
    for (int i = 0; i < m; ++i) draws(r, i) = u(rng);
  std::vector<std::string> ids, district_of;
  std::map<std::string, double> populations;
  for (int i = 0; i < m; ++i) {
    ids.push_back(fmt::format("a{}", i));
    district_of.push_back(fmt::format("d{}", i % 3));
    populations[ids.back()] = pop(rng);
  }
  const std::map<std::string, double> direct{{"d0", 0.31}, {"d1", 0.27}, {"d2", 0.44}};
  double identity_err = 0.0;
  for (const auto& d : district_aggregate(draws, ids, populations, district_of, direct))
    identity_err = std::max(identity_err, std::abs(d.bm_ratio - d.estimate / d.direct));
  const double frac = static_cast<double>(s.bm_within) / s.bm_total;
  return {identity_err <= 1e-12 && frac >= 0.95,
          fmt::format("bm identity error {:.1e}; {} of {} simulated districts with bm ratio in [0.9, 1.1] ({:.3f})",
                      identity_err, s.bm_within, s.bm_total, frac)};
}

Outcome criterion10(const Pipeline& pl) {
  if (!pl.ok) return {false, "pipeline failed:\n" + pl.log};
  const auto est = read_csv(pl.root / "a" / "report" / "estimates.csv");
  const auto con = read_csv(pl.root / "a" / "report" / "contributions.csv");
  const auto design = read_csv(pl.root / "a" / "direct" / "design_summary.csv");
  std::string detail;
  bool pass = true;
  bool found_design = false;
  for (const auto& row : design.rows) {
    if (row[design.column("area_id", "design_summary.csv")] != "A01") continue;
    found_design = true;
    const double z = std::stod(row[design.column("z_direct", "design_summary.csv")]);
    detail += fmt::format("direct z {}; ", z);
    pass = pass && z == 0.0;
  }
  pass = pass && found_design;
  bool found_est = false;
  for (const auto& row : est.rows) {
    if (row[0] != "A01") continue;
    found_est = true;
    const double mean = std::stod(row[est.column("mean", "estimates.csv")]);
    const double sd = std::stod(row[est.column("sd", "estimates.csv")]);
    detail += fmt::format("NL_RS mean {:.4f} sd {:.4f}; ", mean, sd);
    pass = pass && std::isfinite(mean) && mean > 0.0 && mean < 1.0 && std::isfinite(sd) && sd > 0.0;
  }
  bool found_con = false;
  for (const auto& row : con.rows) {
    if (row[0] != "A01") continue;
    found_con = true;
    std::string shares;
    for (std::size_t c = 1; c < row.size(); ++c) {
      const double v = std::stod(row[c]);
      pass = pass && std::isfinite(v);
    }
    for (const char* col : {"md", "sd", "hc"}) shares += fmt::format(" {:.3f}", std::stod(row[con.column(col, "contributions.csv")]));
    detail += "MV shares" + shares;
  }
  return {pass && found_est && found_con, detail};
}

Outcome criterion11(const Pipeline& pl) {
  if (!pl.ok) return {false, "pipeline failed:\n" + pl.log};
  Pipeline second = pl;
  const auto t_sim = fmt::format("simulate --config {} --seed 21 --out {}", (pl.root / "sim.json").string(),
                                 (pl.root / "sim_b").string());
  if (!run_step(second, t_sim)) return {false, second.log};
  std::vector<std::pair<fs::path, fs::path>> dirs{{pl.survey, pl.root / "sim_b"}};
  // Rerun every downstream command into a second tree that consumes its own upstream outputs.
  const auto second_cmds = pipeline_commands(pl, pl.root / "b", pl.root / "persons.csv");
  for (const auto& cmd : second_cmds)
    if (!run_step(second, cmd)) return {false, second.log};
  for (const char* d : {"direct", "fit_rs", "fit_fh", "fit_mv", "compare", "report"})
    dirs.emplace_back(pl.root / "a" / d, pl.root / "b" / d);

  int mismatched = 0;
  std::size_t files = 0;
  std::string which;
  for (const auto& [a, b] : dirs) {
    const auto da = data_digests(a);
    const auto db = data_digests(b);
    files += da.size();
    if (da != db || da.empty()) {
      ++mismatched;
      which += " " + a.filename().string();
    }
  }
  return {mismatched == 0, fmt::format("{} command outputs, {} data files, mismatched:{}", dirs.size(), files,
                                       which.empty() ? " none" : which)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int n, const Outcome& o) {
    fmt::print("criterion {}: {} ({})\n", n, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
    failures += !o.pass;
  };
  report(1, criterion1());
  report(2, criterion2());
  report(3, criterion3());
  report(4, criterion4());
  const auto reps = nl_rs_replications(200);
  report(5, criterion5(reps));
  report(6, criterion6());
  const auto pl = build_pipeline();
  report(7, criterion7(pl));
  report(8, criterion8());
  report(9, criterion9(reps));
  report(10, criterion10(pl));
  report(11, criterion11(pl));
  fmt::print("{} of 11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
