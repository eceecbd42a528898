// povmap: direct estimation, model fitting, comparison, reporting and simulation.

#include "povmap/pipeline.hpp"
#include "povmap/types.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdio>

namespace {

template <typename T>
void optional_option(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace povmap;
  CLI::App app{"Small-area poverty mapping: survey direct estimates, hierarchical models, LOO comparison"};
  app.set_version_flag("--version", software_version());
  app.require_subcommand(1);

  DirectOptions direct;
  auto* c_direct = app.add_subcommand("direct", "Direct estimates, design effects and smoothed variances per area");
  c_direct->add_option("--persons", direct.persons, "Persons CSV")->required();
  optional_option(c_direct, "--areas", direct.areas, "Areas CSV (checked for coverage)");
  c_direct->add_option("--out", direct.out, "Output directory")->required();

  FitOptions fit;
  auto* c_fit = app.add_subcommand("fit", "Fit an area-level model by Hamiltonian Monte Carlo");
  optional_option(c_fit, "--design", fit.design, "Directory written by `povmap direct`");
  optional_option(c_fit, "--persons", fit.persons, "Persons CSV (design summary computed on the fly)");
  optional_option(c_fit, "--areas", fit.areas, "Areas CSV with covariates");
  optional_option(c_fit, "--config", fit.config, "Model config JSON");
  optional_option(c_fit, "--family", fit.family, "FH, NL, NL_RS, NL_PLUGIN or MV_LOGIT (overrides the config)");
  optional_option(c_fit, "--chains", fit.chains, "Number of chains");
  optional_option(c_fit, "--iter", fit.iterations, "Iterations per chain, warmup included");
  optional_option(c_fit, "--warmup", fit.warmup, "Warmup iterations per chain");
  optional_option(c_fit, "--seed", fit.seed, "Random seed");
  optional_option(c_fit, "--threads", fit.threads, "Worker threads (default: POVMAP_THREADS, else one per chain)");
  c_fit->add_option("--out", fit.out, "Output directory")->required();

  CompareOptions cmp;
  auto* c_cmp = app.add_subcommand("compare", "Compare fits by PSIS-LOO expected log predictive density");
  c_cmp->add_option("fits", cmp.fits, "Fit directories")->required();
  c_cmp->add_option("--out", cmp.out, "Output directory")->required();

  ReportOptions rep;
  auto* c_rep = app.add_subcommand("report", "Area, contribution and district tables plus an annotated GeoJSON");
  c_rep->add_option("--fit", rep.fit, "Fit directory")->required();
  optional_option(c_rep, "--mv-fit", rep.mv_fit, "MV_LOGIT fit directory for contribution shares");
  optional_option(c_rep, "--areas", rep.areas, "Areas CSV (populations and districts)");
  optional_option(c_rep, "--geojson", rep.geojson, "FeatureCollection keyed by properties.area_id");
  optional_option(c_rep, "--district-map", rep.district_map, "CSV area_id,district_id");
  optional_option(c_rep, "--persons", rep.persons, "Persons CSV for direct district estimates");
  optional_option(c_rep, "--district-direct", rep.district_direct, "CSV district_id,direct");
  c_rep->add_option("--out", rep.out, "Output directory")->required();

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic two-stage survey with known truth");
  optional_option(c_sim, "--config", sim.config, "Simulation config JSON");
  optional_option(c_sim, "--seed", sim.seed, "Random seed (overrides the config)");
  c_sim->add_option("--validate", sim.validate, "Replications for the direct-estimator unbiasedness check");
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_direct->parsed()) cmd_direct(direct);
    if (c_fit->parsed()) cmd_fit(fit);
    if (c_cmp->parsed()) cmd_compare(cmp);
    if (c_rep->parsed()) cmd_report(rep);
    if (c_sim->parsed()) cmd_simulate(sim);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    fmt::print(stderr, "error: malformed JSON input: {}\n", e.what());
    return 2;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
