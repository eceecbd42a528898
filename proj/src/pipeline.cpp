#include "povmap/pipeline.hpp"

#include "povmap/diagnostics.hpp"
#include "povmap/io.hpp"
#include "povmap/psis.hpp"
#include "povmap/reports.hpp"
#include "povmap/survey_design.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <set>

#ifndef POVMAP_VERSION
#define POVMAP_VERSION "0.0.0"
#endif

namespace povmap {

using nlohmann::json;

std::string software_version() { return POVMAP_VERSION; }

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void warn(const std::string& message) { fmt::print(stderr, "warning: {}\n", message); }

// Collects provenance while a command runs; written last so its output digests cover everything else.
class Manifest {
 public:
  Manifest(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    started_ = utc_now();
    fs::create_directories(out_);
  }

  void input(const std::string& role, const fs::path& path) {
    inputs_[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }
  void config(json effective) { config_ = std::move(effective); }
  void seed(std::uint64_t s) { seed_ = s; }
  void extra(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write() const {
    json outputs = json::object();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(out_))
      if (entry.is_regular_file() && entry.path().filename() != "manifest.json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) outputs[f.filename().string()] = sha256_file(f);
    json j = {{"command", command_},
              {"software_version", software_version()},
              {"config", config_},
              {"config_sha256", sha256_string(config_.dump())},
              {"inputs", inputs_},
              {"outputs", outputs},
              {"started_at", started_},
              {"finished_at", utc_now()}};
    if (seed_) j["seed"] = *seed_;
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    write_json(out_ / "manifest.json", j);
  }

 private:
  std::string command_;
  fs::path out_;
  std::string started_;
  json inputs_ = json::object();
  json config_ = json::object();
  json extra_ = json::object();
  std::optional<std::uint64_t> seed_;
};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(fmt::format("{} must be a JSON object", where));
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw UsageError(fmt::format("unknown key '{}' in {}", key, where));
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("{}: '{}' has the wrong type", where, key));
  }
}

std::string cell(const std::optional<double>& x) { return x ? format_number(*x) : std::string(); }

std::string percent_label(double p) { return fmt::format("{:g}", p * 100.0); }

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

int resolve_threads(const std::optional<int>& flag, int configured) {
  if (flag) return *flag;
  if (const char* env = std::getenv("POVMAP_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0) throw UsageError(fmt::format("POVMAP_THREADS must be a nonnegative integer, got '{}'", env));
    return static_cast<int>(v);
  }
  return configured;
}

// ---------------------------------------------------------------------------
// fit helpers

struct FitInputs {
  DesignSummaryTable design;
  std::vector<std::string> area_ids;
  MatrixXd covariates;  // m x (1 + p), intercept first
  std::vector<std::string> covariate_names;
};

struct FitOutputs {
  PosteriorDraws outputs;
  MatrixXd loglik;
  std::vector<std::string> observed_ids;
};

FitOutputs run_model(const Model& model, const SamplerConfig& sampler, const std::vector<std::string>& area_ids) {
  const PosteriorDraws raw = sample(model, sampler);
  FitOutputs out;
  out.outputs = raw.map([&model](const VectorXd& q) { return model.outputs(q); }, model.output_names());
  out.outputs.divergences = raw.divergences;
  out.outputs.step_size = raw.step_size;
  out.outputs.inv_metric = raw.inv_metric;
  out.outputs.mean_accept = raw.mean_accept;
  out.loglik = pointwise_loglik(model, raw.stacked());
  for (int i : model.observed_areas()) out.observed_ids.push_back(area_ids[static_cast<std::size_t>(i)]);
  return out;
}

void write_summary_csv(const fs::path& path, const PosteriorDraws& draws, json& diagnostics) {
  const auto& probs = default_probabilities();
  std::vector<std::string> header{"name", "mean", "se_mean", "sd"};
  for (double p : probs) header.push_back("q" + percent_label(p));
  header.push_back("n_eff");
  header.push_back("Rhat");
  CsvWriter w(path);
  w.row(header);
  std::optional<double> max_rhat;
  std::optional<double> min_ess;
  std::vector<std::string> high_rhat;
  for (int j = 0; j < draws.dim(); ++j) {
    const std::string& name = draws.parameter_names[static_cast<std::size_t>(j)];
    const AreaEstimate e = summarize_quantity(draws.parameter(j));
    std::vector<std::string> row{name, format_number(e.mean), format_number(e.mcse), format_number(e.sd)};
    for (double p : probs) row.push_back(format_number(e.q(p)));
    row.push_back(cell(e.n_eff));
    row.push_back(cell(e.rhat));
    w.row(row);
    if (e.rhat) {
      max_rhat = std::max(max_rhat.value_or(*e.rhat), *e.rhat);
      if (*e.rhat >= kRhatWarning) high_rhat.push_back(name);
    }
    if (e.n_eff) min_ess = std::min(min_ess.value_or(*e.n_eff), *e.n_eff);
  }
  diagnostics["max_rhat"] = max_rhat ? json(*max_rhat) : json(nullptr);
  diagnostics["min_n_eff"] = min_ess ? json(*min_ess) : json(nullptr);
  diagnostics["high_rhat_parameters"] = high_rhat;
  if (!high_rhat.empty()) {
    const std::string msg = fmt::format("{} parameter(s) have R-hat >= {} (max {:.4f}); chains may not have converged",
                                        high_rhat.size(), kRhatWarning, *max_rhat);
    diagnostics["warnings"].push_back(msg);
    warn(msg);
  }
}

json sampler_diagnostics(const PosteriorDraws& draws) {
  json j;
  j["divergences"] = draws.divergences;
  j["total_divergences"] = draws.total_divergences();
  j["step_size"] = draws.step_size;
  j["mean_accept_stat"] = draws.mean_accept;
  return j;
}

FitInputs load_fit_inputs(const FitOptions& o, const ModelConfig& cfg, Manifest& manifest) {
  FitInputs in;
  if (o.design && o.persons) throw UsageError("pass either --design or --persons, not both");
  if (o.design) {
    const fs::path csv = *o.design / "design_summary.csv";
    const fs::path fx = *o.design / "design_effects.json";
    manifest.input("design_summary", csv);
    manifest.input("design_effects", fx);
    in.design = read_design_summary(csv, fx);
  } else if (o.persons) {
    manifest.input("persons", *o.persons);
    const auto persons = read_persons(*o.persons);
    in.design = summarize_design(persons);
  } else {
    throw UsageError("fit needs --design <dir> or --persons <csv>");
  }
  for (const auto& a : in.design.areas) in.area_ids.push_back(a.area_id);

  std::optional<AreasTable> areas;
  if (o.areas) {
    manifest.input("areas", *o.areas);
    areas = read_areas(*o.areas);
  }
  if (cfg.covariates && !cfg.covariates->empty() && !areas)
    throw UsageError("--areas is required when the model uses covariates");
  in.covariate_names = cfg.covariates.value_or(areas ? areas->covariate_names : std::vector<std::string>{});
  if (areas) {
    for (const auto& id : in.area_ids)
      if (!areas->contains(id)) throw DataError(fmt::format("area '{}' of the survey is missing from the areas file", id));
    in.covariates = areas->design_matrix(in.area_ids, in.covariate_names);
  } else {
    in.covariates = MatrixXd::Ones(static_cast<Eigen::Index>(in.area_ids.size()), 1);
  }
  return in;
}

AreaLevelData area_level_data(const FitInputs& in) {
  const auto m = static_cast<Eigen::Index>(in.area_ids.size());
  AreaLevelData d;
  d.z.resize(m);
  d.D.resize(m);
  d.n_adjusted.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& a = in.design.areas[static_cast<std::size_t>(i)];
    d.z(i) = a.z_direct;
    d.D(i) = a.D_smoothed;
    d.n_adjusted(i) = a.n_adjusted;
  }
  d.deff = in.design.effects.deff_poverty;
  d.X = in.covariates;
  return d;
}

MultivariateData multivariate_data(const FitInputs& in, const ModelConfig& cfg) {
  const int K = in.design.K;
  if (K < 1) throw UsageError("MV_LOGIT needs dimensional scores (score_1..score_K columns)");
  MultivariateData d;
  d.K = K;
  for (const auto& a : in.design.areas) {
    d.y.push_back(a.y_direct);
    d.sigma.push_back(a.sigma_hat);
  }
  d.X = make_mv_design(in.covariates, K, cfg.dimension_specific);
  return d;
}

VectorXd posterior_mean_pi(const PosteriorDraws& outputs, int m) {
  const MatrixXd all = outputs.stacked();
  VectorXd mean(m);
  for (int i = 0; i < m; ++i) mean(i) = all.col(outputs.index_of(fmt::format("pi[{}]", i + 1))).mean();
  return mean;
}

// ---------------------------------------------------------------------------
// report helpers

struct LoadedFit {
  json meta;
  PosteriorDraws draws;
  std::vector<std::string> area_ids;
  ModelFamily family = ModelFamily::kNL;
};

LoadedFit load_fit(const fs::path& dir, Manifest& manifest, const std::string& role) {
  LoadedFit f;
  manifest.input(role + "_fit_json", dir / "fit.json");
  manifest.input(role + "_draws", dir / "draws.csv");
  f.meta = read_json(dir / "fit.json");
  f.draws = read_draws_csv(dir / "draws.csv");
  f.area_ids = get_as<std::vector<std::string>>(f.meta, "area_ids", (dir / "fit.json").string());
  f.family = parse_family(get_as<std::string>(f.meta, "family", (dir / "fit.json").string()));
  return f;
}

const std::vector<double>& report_probabilities() {
  static const std::vector<double> probs{0.025, 0.16, 0.84, 0.975};
  return probs;
}

std::vector<std::string> estimate_header(std::vector<std::string> lead) {
  for (const char* c : {"mean", "sd", "q2.5", "q16", "q84", "q97.5", "n_eff", "rhat"}) lead.emplace_back(c);
  return lead;
}

std::vector<std::string> estimate_cells(std::vector<std::string> lead, const AreaEstimate& e) {
  lead.push_back(format_number(e.mean));
  lead.push_back(format_number(e.sd));
  for (double p : report_probabilities()) lead.push_back(format_number(e.q(p)));
  lead.push_back(cell(e.n_eff));
  lead.push_back(cell(e.rhat));
  return lead;
}

std::vector<std::string> dimension_labels(int K) {
  if (K == 3) return {"md", "sd", "hc"};
  std::vector<std::string> out;
  for (int k = 0; k < K; ++k) out.push_back(fmt::format("d{}", k + 1));
  return out;
}

std::map<std::string, std::string> read_two_columns(const fs::path& path, const std::string& key, const std::string& value) {
  const auto t = read_csv(path);
  const auto ck = t.column(key, path.string());
  const auto cv = t.column(value, path.string());
  std::map<std::string, std::string> out;
  for (const auto& row : t.rows) out[row[ck]] = row[cv];
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

json sampler_config_to_json(const SamplerConfig& c) {
  return {{"chains", c.chains},
          {"iterations", c.iterations},
          {"warmup", c.warmup},
          {"seed", c.seed},
          {"target_accept", c.target_accept},
          {"max_leapfrog", c.max_leapfrog},
          {"init_radius", c.init_radius},
          {"algorithm", c.nuts ? "nuts" : "static"},
          {"fixed_steps", c.fixed_steps},
          {"threads", c.threads}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model config";
  reject_unknown(j, {"family", "covariates", "K", "priors", "dimension_specific_coefficients", "sampler"}, where);
  ModelConfig cfg;
  if (!j.contains("family")) throw UsageError("model config needs a 'family'");
  cfg.family = parse_family(get_as<std::string>(j, "family", where));
  if (j.contains("covariates")) cfg.covariates = get_as<std::vector<std::string>>(j, "covariates", where);
  if (j.contains("K")) {
    cfg.K = get_as<int>(j, "K", where);
    if (*cfg.K < 0) throw UsageError("K must be nonnegative");
  }
  if (j.contains("dimension_specific_coefficients"))
    cfg.dimension_specific = get_as<bool>(j, "dimension_specific_coefficients", where);
  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    reject_unknown(p, {"coeff_scale", "sd_scale", "correlation"}, "priors");
    if (p.contains("coeff_scale")) cfg.priors.coeff_scale = get_as<double>(p, "coeff_scale", "priors");
    if (p.contains("sd_scale")) cfg.priors.sd_scale = get_as<double>(p, "sd_scale", "priors");
    if (p.contains("correlation")) {
      const auto c = get_as<std::string>(p, "correlation", "priors");
      if (c == "uniform") {
        cfg.priors.zero_correlation = false;
      } else if (c == "zero") {
        cfg.priors.zero_correlation = true;
      } else {
        throw UsageError(fmt::format("priors.correlation must be 'uniform' or 'zero', got '{}'", c));
      }
    }
    if (!(cfg.priors.coeff_scale > 0.0) || !(cfg.priors.sd_scale > 0.0)) throw UsageError("prior scales must be positive");
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    const std::string sw = "sampler";
    reject_unknown(s, {"chains", "iterations", "warmup", "seed", "target_accept", "max_leapfrog", "init_radius", "algorithm",
                       "fixed_steps", "threads"},
                   sw);
    auto& c = cfg.sampler;
    if (s.contains("chains")) c.chains = get_as<int>(s, "chains", sw);
    if (s.contains("iterations")) c.iterations = get_as<int>(s, "iterations", sw);
    if (s.contains("warmup")) c.warmup = get_as<int>(s, "warmup", sw);
    if (s.contains("seed")) c.seed = get_as<std::uint64_t>(s, "seed", sw);
    if (s.contains("target_accept")) c.target_accept = get_as<double>(s, "target_accept", sw);
    if (s.contains("max_leapfrog")) c.max_leapfrog = get_as<int>(s, "max_leapfrog", sw);
    if (s.contains("init_radius")) c.init_radius = get_as<double>(s, "init_radius", sw);
    if (s.contains("fixed_steps")) c.fixed_steps = get_as<int>(s, "fixed_steps", sw);
    if (s.contains("threads")) c.threads = get_as<int>(s, "threads", sw);
    if (s.contains("algorithm")) {
      const auto a = get_as<std::string>(s, "algorithm", sw);
      if (a != "nuts" && a != "static") throw UsageError("sampler.algorithm must be 'nuts' or 'static'");
      c.nuts = a == "nuts";
    }
  }
  return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
  json j = {{"family", to_string(cfg.family)},
            {"priors",
             {{"coeff_scale", cfg.priors.coeff_scale},
              {"sd_scale", cfg.priors.sd_scale},
              {"correlation", cfg.priors.zero_correlation ? "zero" : "uniform"}}},
            {"dimension_specific_coefficients", cfg.dimension_specific},
            {"sampler", sampler_config_to_json(cfg.sampler)}};
  if (cfg.covariates) j["covariates"] = *cfg.covariates;
  if (cfg.K) j["K"] = *cfg.K;
  return j;
}

// ---------------------------------------------------------------------------
// direct

void cmd_direct(const DirectOptions& o) {
  Manifest manifest("direct", o.out);
  manifest.input("persons", o.persons);
  const auto persons = read_persons(o.persons);
  const DesignSummaryTable table = summarize_design(persons);
  if (o.areas) {
    manifest.input("areas", *o.areas);
    const AreasTable areas = read_areas(*o.areas);
    std::set<std::string> sampled;
    for (const auto& a : table.areas) {
      sampled.insert(a.area_id);
      if (!areas.contains(a.area_id))
        throw DataError(fmt::format("area '{}' of the survey is missing from the areas file", a.area_id));
    }
    std::vector<std::string> unsampled;
    for (const auto& r : areas.rows)
      if (!sampled.count(r.area_id)) unsampled.push_back(r.area_id);
    if (!unsampled.empty())
      warn(fmt::format("{} area(s) have no survey respondents and get no design summary row", unsampled.size()));
  }
  write_design_summary(o.out / "design_summary.csv", table);
  write_json(o.out / "design_effects.json", design_effects_to_json(table.effects));
  manifest.config({{"K", table.K}});
  manifest.write();
}

// ---------------------------------------------------------------------------
// fit

void cmd_fit(const FitOptions& o) {
  json file_cfg = json::object();
  if (o.config) file_cfg = read_json(*o.config);
  if (o.family) file_cfg["family"] = *o.family;
  if (!file_cfg.is_object()) throw UsageError("model config must be a JSON object");
  if (!file_cfg.contains("family")) throw UsageError("no model family given (use --family or a config file)");
  ModelConfig cfg = model_config_from_json(file_cfg);
  if (o.chains) cfg.sampler.chains = *o.chains;
  if (o.iterations) cfg.sampler.iterations = *o.iterations;
  if (o.warmup) cfg.sampler.warmup = *o.warmup;
  if (o.seed) cfg.sampler.seed = *o.seed;
  cfg.sampler.threads = resolve_threads(o.threads, cfg.sampler.threads);
  cfg.sampler.validate();

  Manifest manifest("fit", o.out);
  if (o.config) manifest.input("config", *o.config);
  const FitInputs in = load_fit_inputs(o, cfg, manifest);
  if (cfg.K && *cfg.K != in.design.K)
    throw UsageError(fmt::format("config K = {} but the data has {} score column(s)", *cfg.K, in.design.K));
  if (!cfg.covariates) cfg.covariates = in.covariate_names;
  // The thread count never changes results, so it stays out of the recorded config.
  json effective = model_config_to_json(cfg);
  effective["sampler"].erase("threads");
  manifest.config(effective);
  manifest.seed(cfg.sampler.seed);

  const int m = static_cast<int>(in.area_ids.size());
  json diagnostics = {{"status", "ok"},
                      {"rhat_variant", "split"},
                      {"rhat_warning_threshold", kRhatWarning},
                      {"quantile_convention", "type 7 (linear interpolation of order statistics)"},
                      {"warnings", json::array()}};
  json meta = {{"family", to_string(cfg.family)},
               {"K", in.design.K},
               {"area_ids", in.area_ids},
               {"covariates", in.covariate_names},
               {"deff", in.design.effects.deff_poverty},
               {"model_config", effective}};
  {
    std::vector<double> z;
    std::vector<double> nt;
    for (const auto& a : in.design.areas) {
      z.push_back(a.z_direct);
      nt.push_back(a.n_adjusted);
    }
    meta["z_direct"] = z;
    meta["n_adjusted"] = nt;
  }

  auto fail = [&](const std::string& stage, const std::exception& e) {
    diagnostics["status"] = "failed";
    diagnostics["stage"] = stage;
    diagnostics["error"] = e.what();
    write_json(o.out / "diagnostics.json", diagnostics);
    manifest.write();
  };

  std::unique_ptr<Model> model;
  if (cfg.family == ModelFamily::kMVLogit) {
    model = std::make_unique<MultivariateLogitModel>(multivariate_data(in, cfg), cfg.priors);
  } else {
    AreaLevelData data = area_level_data(in);
    if (cfg.family == ModelFamily::kNLPlugin) {
      // Stage one: NL with the smoothed variances; its posterior means become the plug-in values.
      FitOutputs stage1;
      try {
        stage1 = run_model(UnivariateModel(ModelFamily::kNL, data, cfg.priors), cfg.sampler, in.area_ids);
      } catch (const NumericalError& e) {
        fail("plug-in NL fit", e);
        throw;
      }
      diagnostics["plugin_stage"] = sampler_diagnostics(stage1.outputs);
      const VectorXd plugin = posterior_mean_pi(stage1.outputs, m).cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);
      data.plugin = plugin;
      meta["plugin"] = to_std(plugin);
    }
    model = make_univariate(cfg.family, data, cfg.priors);
  }

  FitOutputs fit;
  try {
    fit = run_model(*model, cfg.sampler, in.area_ids);
  } catch (const NumericalError& e) {
    fail("sampling", e);
    throw;
  }

  meta["observed_area_ids"] = fit.observed_ids;
  diagnostics["sampler"] = sampler_diagnostics(fit.outputs);
  if (const int d = fit.outputs.total_divergences(); d > 0) {
    const std::string msg = fmt::format("{} divergent transition(s) after warmup", d);
    diagnostics["warnings"].push_back(msg);
    warn(msg);
  }

  write_json(o.out / "fit.json", meta);
  write_draws_csv(o.out / "draws.csv", fit.outputs);
  write_json(o.out / "draws.json", draws_sidecar(fit.outputs, cfg.sampler));
  write_matrix_csv(o.out / "log_lik.csv", fit.loglik, fit.observed_ids);
  write_summary_csv(o.out / "summary.csv", fit.outputs, diagnostics);
  write_json(o.out / "diagnostics.json", diagnostics);
  manifest.write();
}

// ---------------------------------------------------------------------------
// compare

void cmd_compare(const CompareOptions& o) {
  if (o.fits.size() < 2) throw UsageError("compare needs at least two fit directories");
  Manifest manifest("compare", o.out);
  std::vector<NamedLoo> loos;
  std::vector<std::vector<std::string>> ids;
  std::vector<std::string> families;
  for (std::size_t f = 0; f < o.fits.size(); ++f) {
    const fs::path& dir = o.fits[f];
    const std::string role = fmt::format("fit{}", f + 1);
    manifest.input(role + "_fit_json", dir / "fit.json");
    manifest.input(role + "_log_lik", dir / "log_lik.csv");
    const json meta = read_json(dir / "fit.json");
    families.push_back(get_as<std::string>(meta, "family", (dir / "fit.json").string()));
    std::vector<std::string> header;
    const MatrixXd ll = read_matrix_csv(dir / "log_lik.csv", &header);
    ids.push_back(header);
    loos.push_back({families.back(), elpd_loo(ll)});
  }
  for (std::size_t f = 1; f < ids.size(); ++f)
    if (ids[f] != ids[0])
      throw DataError(fmt::format("fits '{}' and '{}' do not share the same observations", o.fits[0].string(),
                                  o.fits[f].string()));
  // Family names label the rows unless two fits share a family.
  std::set<std::string> seen(families.begin(), families.end());
  if (seen.size() != families.size())
    for (std::size_t f = 0; f < loos.size(); ++f) loos[f].name = fmt::format("{}:{}", families[f], o.fits[f].string());
  std::map<std::string, int> uses;
  for (const auto& l : loos) ++uses[l.name];
  for (std::size_t f = 0; f < loos.size(); ++f)
    if (uses[loos[f].name] > 1) loos[f].name += fmt::format("#{}", f + 1);

  const auto rows = compare(loos);
  {
    CsvWriter w(o.out / "comparison.csv");
    w.row({"model", "elpd_diff", "se_diff"});
    for (const auto& r : rows) w.row({r.model_name, format_number(r.elpd_diff), format_number(r.se_diff)});
  }
  // Everything below follows the best-first ranking, so no file depends on argument order.
  std::map<std::string, std::size_t> index_of;
  for (std::size_t f = 0; f < loos.size(); ++f) index_of[loos[f].name] = f;
  json models = json::array();
  {
    CsvWriter elpd(o.out / "elpd.csv");
    elpd.row({"model", "elpd_loo", "se_elpd_loo", "pointwise_file"});
    for (std::size_t rank = 0; rank < rows.size(); ++rank) {
      const std::size_t f = index_of.at(rows[rank].model_name);
      const auto& l = loos[f].loo;
      const std::string file = fmt::format("loo_pointwise_{}.csv", rank + 1);
      elpd.row({loos[f].name, format_number(l.elpd_loo), format_number(l.se_elpd), file});
      models.push_back({{"name", loos[f].name}, {"fit", o.fits[f].string()}, {"pointwise_file", file}});
      CsvWriter w(o.out / file);
      w.row({"area_id", "elpd_i", "pareto_k"});
      int high = 0;
      for (Eigen::Index i = 0; i < l.pointwise_elpd.size(); ++i) {
        w.row({ids[f][static_cast<std::size_t>(i)], format_number(l.pointwise_elpd(i)), format_number(l.pareto_k(i))});
        if (l.pareto_k(i) > kParetoKWarning) ++high;
      }
      if (high > 0)
        warn(fmt::format("{}: {} observation(s) with Pareto k > {}; PSIS-LOO may be unreliable", loos[f].name, high,
                         kParetoKWarning));
    }
  }
  manifest.config({{"models", models}, {"pareto_k_threshold", kParetoKWarning}});
  manifest.write();
}

// ---------------------------------------------------------------------------
// report

void cmd_report(const ReportOptions& o) {
  Manifest manifest("report", o.out);
  LoadedFit fit = load_fit(o.fit, manifest, "primary");
  std::optional<LoadedFit> mv;
  if (fit.family == ModelFamily::kMVLogit) {
    if (o.mv_fit) throw UsageError("--fit is already an MV_LOGIT fit; --mv-fit is for pairing with a univariate fit");
    mv = std::move(fit);
  } else if (o.mv_fit) {
    mv = load_fit(*o.mv_fit, manifest, "mv");
    if (mv->family != ModelFamily::kMVLogit) throw UsageError("--mv-fit must point at an MV_LOGIT fit");
  }
  const bool univariate = !(mv && !o.mv_fit);

  std::optional<AreasTable> areas;
  if (o.areas) {
    manifest.input("areas", *o.areas);
    areas = read_areas(*o.areas);
  }
  json config = {{"quantile_convention", "type 7 (linear interpolation of order statistics)"},
                 {"population_weights", "areas file population column"}};

  std::map<std::string, MapRecord> map_records;
  auto record = [&](const std::string& id) -> MapRecord& {
    auto& r = map_records[id];
    r.area_id = id;
    return r;
  };

  // Poverty rates.
  std::vector<AreaEstimate> estimates;
  MatrixXd pi_draws;
  if (univariate) {
    const int m = static_cast<int>(fit.area_ids.size());
    std::vector<int> cols;
    for (int i = 0; i < m; ++i) cols.push_back(fit.draws.index_of(fmt::format("pi[{}]", i + 1)));
    estimates = summarize(fit.draws, cols, fit.area_ids);
    {
      CsvWriter w(o.out / "estimates.csv");
      w.row(estimate_header({"area_id"}));
      for (const auto& e : estimates) {
        w.row(estimate_cells({e.area_id}, e));
        auto& r = record(e.area_id);
        r.estimate = e.mean;
        r.se = e.sd;
        r.ci_low = e.q(0.025);
        r.ci_high = e.q(0.975);
      }
    }
    const MatrixXd all = fit.draws.stacked();
    pi_draws.resize(all.rows(), m);
    for (int i = 0; i < m; ++i) pi_draws.col(i) = all.col(cols[static_cast<std::size_t>(i)]);

    if (fit.family == ModelFamily::kNLRS) {
      const auto nt = get_as<std::vector<double>>(fit.meta, "n_adjusted", "fit.json");
      const double deff = get_as<double>(fit.meta, "deff", "fit.json");
      CsvWriter w(o.out / "sampling_sd.csv");
      w.row(estimate_header({"area_id"}));
      for (int i = 0; i < m; ++i) {
        const auto e = sampling_sd_posterior(fit.draws.parameter(cols[static_cast<std::size_t>(i)]),
                                             nt[static_cast<std::size_t>(i)], deff, fit.area_ids[static_cast<std::size_t>(i)]);
        w.row(estimate_cells({e.area_id}, e));
      }
    }
  }

  // Dimension scores and contribution shares.
  if (mv) {
    const int K = get_as<int>(mv->meta, "K", "fit.json");
    const int m = static_cast<int>(mv->area_ids.size());
    const auto labels = dimension_labels(K);
    const MatrixXd all = mv->draws.stacked();
    std::vector<MatrixXd> theta(static_cast<std::size_t>(m), MatrixXd(all.rows(), K));
    CsvWriter tw(o.out / "theta_estimates.csv");
    tw.row(estimate_header({"area_id", "dimension"}));
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < K; ++k) {
        const int c = mv->draws.index_of(fmt::format("theta[{},{}]", i + 1, k + 1));
        theta[static_cast<std::size_t>(i)].col(k) = all.col(c);
        const auto e = summarize_quantity(mv->draws.parameter(c));
        tw.row(estimate_cells({mv->area_ids[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(k)]}, e));
      }
    }
    const auto shares = contributions(theta, mv->area_ids);
    CsvWriter cw(o.out / "contributions.csv");
    std::vector<std::string> header{"area_id"};
    for (const auto& l : labels)
      for (const char* suffix : {"", "_se", "_2.5%", "_97.5%"}) header.push_back(l + suffix);
    cw.row(header);
    for (const auto& c : shares) {
      std::vector<std::string> row{c.area_id};
      for (int k = 0; k < K; ++k) {
        row.push_back(format_number(c.shares(k)));
        row.push_back(format_number(c.share_se(k)));
        row.push_back(format_number(c.share_intervals[static_cast<std::size_t>(k)].first));
        row.push_back(format_number(c.share_intervals[static_cast<std::size_t>(k)].second));
      }
      cw.row(row);
      record(c.area_id).shares = c.shares;
    }
  }

  // District aggregates with benchmarking ratios.
  if (univariate) {
    std::map<std::string, std::string> district_of;
    if (o.district_map) {
      manifest.input("district_map", *o.district_map);
      district_of = read_two_columns(*o.district_map, "area_id", "district_id");
    } else if (areas) {
      for (const auto& r : areas->rows)
        if (!r.district_id.empty()) district_of[r.area_id] = r.district_id;
    }
    const bool mapped = !district_of.empty();
    if (mapped && !areas) throw UsageError("district estimates need --areas for the population column");
    std::map<std::string, double> direct;
    if (mapped && o.district_direct) {
      manifest.input("district_direct", *o.district_direct);
      const auto t = read_two_columns(*o.district_direct, "district_id", "direct");
      for (const auto& [d, v] : t) direct[d] = parse_number(v, o.district_direct->string(), 0, "direct");
    } else if (mapped && o.persons) {
      manifest.input("persons", *o.persons);
      const auto persons = read_persons(*o.persons);
      std::map<std::string, std::vector<PersonRecord>> by_district;
      for (const auto& p : persons) {
        const auto it = district_of.find(p.area_id);
        if (it == district_of.end()) throw DataError(fmt::format("area '{}' has no district", p.area_id));
        by_district[it->second].push_back(p);
      }
      for (const auto& [d, ps] : by_district)
        direct[d] = weighted_mean_ultimate_cluster(ps, [](const PersonRecord& p) { return double(p.poor); }).value;
    }
    if (mapped && direct.empty()) {
      warn("district estimates skipped: pass --persons or --district-direct for the direct district values");
    } else if (mapped) {
      std::vector<std::string> district_vec;
      std::map<std::string, double> populations;
      for (const auto& id : fit.area_ids) {
        const auto it = district_of.find(id);
        if (it == district_of.end()) throw DataError(fmt::format("area '{}' has no district", id));
        district_vec.push_back(it->second);
        if (areas->contains(id) && areas->find(id).population) populations[id] = *areas->find(id).population;
      }
      const auto districts = district_aggregate(pi_draws, fit.area_ids, populations, district_vec, direct);
      CsvWriter w(o.out / "districts.csv");
      w.row({"district_id", "estimate", "se", "q2.5", "q16", "q84", "q97.5", "direct", "bm_ratio"});
      for (const auto& d : districts)
        w.row({d.district_id, format_number(d.estimate), format_number(d.se), format_number(d.q025), format_number(d.q16),
               format_number(d.q84), format_number(d.q975), format_number(d.direct), format_number(d.bm_ratio)});
    }
  }

  if (o.geojson) {
    manifest.input("geojson", *o.geojson);
    const json fc = read_json(*o.geojson);
    std::vector<MapRecord> records;
    for (const auto& [id, r] : map_records) records.push_back(r);
    std::vector<std::string> unmatched;
    const json annotated = emit_geojson(records, fc, "area_id", &unmatched);
    if (!unmatched.empty())
      warn(fmt::format("{} map feature(s) have no estimate and were given null properties: {}", unmatched.size(),
                       fmt::join(unmatched, ", ")));
    std::set<std::string> in_map;
    for (const auto& f : annotated.at("features"))
      if (f.contains("properties") && f["properties"].contains("area_id") && f["properties"]["area_id"].is_string())
        in_map.insert(f["properties"]["area_id"].get<std::string>());
    std::vector<std::string> missing;
    for (const auto& [id, r] : map_records)
      if (!in_map.count(id)) missing.push_back(id);
    if (!missing.empty())
      warn(fmt::format("{} estimated area(s) have no map feature: {}", missing.size(), fmt::join(missing, ", ")));
    write_json(o.out / "map.geojson", annotated);
  }
  manifest.config(config);
  manifest.write();
}

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(const SimulateOptions& o) {
  SimConfig cfg;
  if (o.config) cfg = sim_config_from_json(read_json(*o.config));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  if (o.validate < 0) throw UsageError("--validate needs a nonnegative replication count");

  Manifest manifest("simulate", o.out);
  if (o.config) manifest.input("config", *o.config);
  const json effective = sim_config_to_json(cfg);
  manifest.config(effective);
  manifest.seed(cfg.seed);

  const SimulatedSurvey sim = generate(cfg);
  write_persons(o.out / "persons.csv", sim.persons);
  write_areas(o.out / "areas.csv", sim.areas);
  write_json(o.out / "truth.json", truth_to_json(sim.truth));
  write_json(o.out / "config.json", effective);

  if (o.validate > 0) {
    const int m = cfg.m_areas;
    const int R = o.validate;
    MatrixXd z(R, m);
    VectorXd overall(R);
    for (int r = 0; r < R; ++r) {
      const SimulatedSurvey rep = r == 0 ? sim : generate(cfg, r);
      std::size_t begin = 0;
      for (int i = 0; i < m; ++i) {
        std::size_t end = begin;
        while (end < rep.persons.size() && rep.persons[end].area_id == rep.truth.area_ids[static_cast<std::size_t>(i)]) ++end;
        z(r, i) = direct_proportion(std::span<const PersonRecord>(rep.persons).subspan(begin, end - begin)).value;
        begin = end;
      }
      overall(r) = weighted_mean_ultimate_cluster(rep.persons, [](const PersonRecord& p) { return double(p.poor); }).value;
    }
    double pop_total = 0.0;
    double pop_poor = 0.0;
    for (int i = 0; i < m; ++i) {
      const double n = *sim.areas.rows[static_cast<std::size_t>(i)].population;
      pop_total += n;
      pop_poor += n * sim.truth.pi(i);
    }
    const double true_overall = pop_poor / pop_total;
    auto mc = [R](const VectorXd& v) {
      const double mean = v.mean();
      const double var = R > 1 ? (v.array() - mean).square().sum() / (R - 1) : 0.0;
      return std::pair{mean, std::sqrt(var / R)};
    };
    json rows = json::array();
    int within = 0;
    for (int i = 0; i < m; ++i) {
      const auto [mean, se] = mc(z.col(i));
      const double truth = sim.truth.pi(i);
      const bool ok = std::abs(mean - truth) <= 3.0 * se || (se == 0.0 && mean == truth);
      within += ok ? 1 : 0;
      rows.push_back({{"area_id", sim.truth.area_ids[static_cast<std::size_t>(i)]},
                      {"pi", truth},
                      {"mean_z", mean},
                      {"mc_se", se},
                      {"within_3se", ok}});
    }
    const auto [o_mean, o_se] = mc(overall);
    const bool overall_ok = std::abs(o_mean - true_overall) <= 3.0 * o_se;
    write_json(o.out / "validation.json", {{"replications", R},
                                           {"areas", rows},
                                           {"areas_within_3se", within},
                                           {"overall", {{"population_proportion", true_overall},
                                                        {"mean_direct", o_mean},
                                                        {"mc_se", o_se},
                                                        {"within_3se", overall_ok}}}});
    fmt::print("validation: {} replications, {}/{} areas with mean direct estimate within 3 Monte Carlo SEs of pi\n", R,
               within, m);
    fmt::print("validation: overall weighted proportion {:.5f} vs population {:.5f} (MC SE {:.5f}): {}\n", o_mean,
               true_overall, o_se, overall_ok ? "unbiased within 3 SE" : "OUTSIDE 3 SE");
    manifest.extra("validation_replications", R);
  }
  manifest.write();
}

}  // namespace povmap
