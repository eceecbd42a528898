#pragma once

// CSV and JSON file formats shared by the pipeline commands.

#include "povmap/hmc.hpp"
#include "povmap/survey_design.hpp"
#include "povmap/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace povmap {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws UsageError naming the column when it is absent.
  std::size_t column(const std::string& name, const std::string& file) const;
  std::optional<std::size_t> find_column(const std::string& name) const;
};

/// Plain comma-separated values; no quoting. Blank lines are skipped.
CsvTable read_csv(const std::filesystem::path& path);

/// Parses a real number; throws DataError mentioning file, row and column on failure.
double parse_number(const std::string& text, const std::string& file, std::size_t row, const std::string& column);

/// Round-trip formatting (%.17g); NaN and absent values are written as empty cells.
std::string format_number(double x);

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  CsvWriter& row(const std::vector<std::string>& cells);

 private:
  std::string path_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Persons

std::vector<PersonRecord> read_persons(const std::filesystem::path& path);
void write_persons(const std::filesystem::path& path, const std::vector<PersonRecord>& persons);

// ---------------------------------------------------------------------------
// Areas: area_id, optional district_id and population, remaining columns are covariates.

struct AreaRecord {
  std::string area_id;
  std::string district_id;
  std::optional<double> population;
  VectorXd covariates;
};

struct AreasTable {
  std::vector<std::string> covariate_names;
  std::vector<AreaRecord> rows;

  const AreaRecord& find(const std::string& area_id) const;
  bool contains(const std::string& area_id) const;
  /// m x (1 + |names|) matrix with an intercept column, rows ordered as area_ids.
  MatrixXd design_matrix(const std::vector<std::string>& area_ids, const std::vector<std::string>& names) const;
};

AreasTable read_areas(const std::filesystem::path& path);
void write_areas(const std::filesystem::path& path, const AreasTable& areas);

// ---------------------------------------------------------------------------
// Design summary: area_id,n_households,n_adjusted,z_direct,z_direct_se,D_smoothed,y_1..y_K,
// sigma_k_l for k >= l in row-major lower-triangle order.

void write_design_summary(const std::filesystem::path& path, const DesignSummaryTable& table);
DesignSummaryTable read_design_summary(const std::filesystem::path& csv, const std::filesystem::path& effects_json);

nlohmann::json design_effects_to_json(const DesignEffects& fx);
DesignEffects design_effects_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Draws: chain,iter,<names...> plus a JSON sidecar with the adaptation results.

void write_draws_csv(const std::filesystem::path& path, const PosteriorDraws& draws);
PosteriorDraws read_draws_csv(const std::filesystem::path& path);
nlohmann::json draws_sidecar(const PosteriorDraws& draws, const SamplerConfig& config);

void write_matrix_csv(const std::filesystem::path& path, const MatrixXd& m, const std::vector<std::string>& header);
MatrixXd read_matrix_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Hex SHA-256 of a file's bytes, or of a string.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_string(const std::string& data);

}  // namespace povmap
