#pragma once

// The five command-line pipeline stages. Each writes into its own output
// directory, finishing with a manifest.json, and throws UsageError, DataError
// or NumericalError on failure.

#include "povmap/hmc.hpp"
#include "povmap/model_core.hpp"
#include "povmap/synthetic.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace povmap {

namespace fs = std::filesystem;

std::string software_version();

/// Effective model configuration: the JSON file merged with command-line overrides.
struct ModelConfig {
  ModelFamily family = ModelFamily::kNLRS;
  std::optional<std::vector<std::string>> covariates;  // absent: every covariate column of the areas file
  std::optional<int> K;  // defaults to the number of score columns in the data
  Priors priors;
  bool dimension_specific = false;  // MV_LOGIT: separate coefficients per dimension
  SamplerConfig sampler;
};

/// Unknown keys are rejected with a UsageError.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
nlohmann::json sampler_config_to_json(const SamplerConfig& cfg);

struct DirectOptions {
  fs::path persons;
  std::optional<fs::path> areas;
  fs::path out;
};

struct FitOptions {
  std::optional<fs::path> design;   // directory written by `direct`
  std::optional<fs::path> persons;  // alternative to design
  std::optional<fs::path> areas;
  std::optional<fs::path> config;
  std::optional<std::string> family;
  std::optional<int> chains;
  std::optional<int> iterations;
  std::optional<int> warmup;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  fs::path out;
};

struct CompareOptions {
  std::vector<fs::path> fits;
  fs::path out;
};

struct ReportOptions {
  fs::path fit;
  std::optional<fs::path> mv_fit;
  std::optional<fs::path> areas;
  std::optional<fs::path> geojson;
  std::optional<fs::path> district_map;     // area_id,district_id (overrides the areas file)
  std::optional<fs::path> persons;          // district direct estimates from the survey
  std::optional<fs::path> district_direct;  // district_id,direct
  fs::path out;
};

struct SimulateOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  int validate = 0;  // replications for the unbiasedness check; 0 disables it
  fs::path out;
};

void cmd_direct(const DirectOptions& options);
void cmd_fit(const FitOptions& options);
void cmd_compare(const CompareOptions& options);
void cmd_report(const ReportOptions& options);
void cmd_simulate(const SimulateOptions& options);

}  // namespace povmap
