#include "povmap/io.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <sstream>

namespace povmap {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& c) {
  const auto b = c.find_first_not_of(" \t");
  const auto e = c.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
}

// Fields may be double-quoted, with "" standing for a literal quote. Unquoted fields are trimmed.
std::vector<std::string> split_line(const std::string& line, const std::string& file, std::size_t line_no) {
  std::vector<std::string> cells;
  std::size_t i = 0;
  while (true) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::string cell;
    if (i < line.size() && line[i] == '"') {
      ++i;
      while (true) {
        if (i >= line.size()) throw DataError(fmt::format("{}: line {} has an unterminated quoted field", file, line_no));
        if (line[i] == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cell += '"';
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        cell += line[i++];
      }
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i < line.size() && line[i] != ',')
        throw DataError(fmt::format("{}: line {} has text after a closing quote", file, line_no));
    } else {
      const auto comma = line.find(',', i);
      cell = trim(line.substr(i, comma == std::string::npos ? std::string::npos : comma - i));
      i = comma == std::string::npos ? line.size() : comma;
    }
    cells.push_back(std::move(cell));
    if (i >= line.size()) break;
    ++i;  // the comma
  }
  return cells;
}

std::string quote_if_needed(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos && cell == trim(cell)) return cell;
  std::string out = "\"";
  for (char ch : cell) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (j) out += ',';
    out += quote_if_needed(cells[j]);
  }
  return out;
}

}  // namespace

std::optional<std::size_t> CsvTable::find_column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t CsvTable::column(const std::string& name, const std::string& file) const {
  if (auto c = find_column(name)) return *c;
  throw UsageError(fmt::format("{}: missing required column '{}'", file, name));
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open {}", path.string()));
  CsvTable t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_line(line, path.string(), line_no);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw DataError(fmt::format("{}: line {} has {} fields, header has {}", path.string(), line_no, cells.size(),
                                  t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw DataError(fmt::format("{}: file is empty", path.string()));
  return t;
}

double parse_number(const std::string& text, const std::string& file, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw DataError(fmt::format("{}: row {}, column '{}': cannot parse '{}' as a number", file, row, column, text));
  return value;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "";
  return fmt::format("{:.17g}", x);
}

CsvWriter::CsvWriter(const fs::path& path) : path_(path.string()), out_(path) {
  if (!out_) throw UsageError(fmt::format("cannot write {}", path_));
}

CsvWriter& CsvWriter::row(const std::vector<std::string>& cells) {
  out_ << join(cells) << '\n';
  return *this;
}

// ---------------------------------------------------------------------------

std::vector<PersonRecord> read_persons(const fs::path& path) {
  const auto t = read_csv(path);
  const std::string file = path.string();
  const auto c_area = t.column("area_id", file);
  const auto c_psu = t.column("psu_id", file);
  const auto c_hh = t.column("household_id", file);
  const auto c_person = t.column("person_id", file);
  const auto c_weight = t.column("weight", file);
  const auto c_poor = t.column("poor", file);
  std::vector<std::size_t> c_scores;
  while (auto c = t.find_column(fmt::format("score_{}", c_scores.size() + 1))) c_scores.push_back(*c);

  std::vector<PersonRecord> persons;
  persons.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t row_no = r + 1;
    PersonRecord p;
    p.area_id = row[c_area];
    p.psu_id = row[c_psu];
    p.household_id = row[c_hh];
    p.person_id = row[c_person];
    if (p.area_id.empty()) throw DataError(fmt::format("{}: row {}, column 'area_id': empty identifier", file, row_no));
    p.weight = parse_number(row[c_weight], file, row_no, "weight");
    const double poor = parse_number(row[c_poor], file, row_no, "poor");
    if (poor != 0.0 && poor != 1.0)
      throw DataError(fmt::format("{}: row {}, column 'poor': expected 0 or 1, got '{}'", file, row_no, row[c_poor]));
    p.poor = static_cast<int>(poor);
    p.scores = VectorXd::Zero(static_cast<Eigen::Index>(c_scores.size()));
    for (std::size_t k = 0; k < c_scores.size(); ++k) {
      const auto& cell = row[c_scores[k]];
      const std::string col = fmt::format("score_{}", k + 1);
      if (cell.empty()) {
        if (p.poor == 1) throw DataError(fmt::format("{}: row {}, column '{}': poor person needs a score", file, row_no, col));
        continue;
      }
      p.scores(static_cast<Eigen::Index>(k)) = parse_number(cell, file, row_no, col);
    }
    persons.push_back(std::move(p));
  }
  return persons;
}

void write_persons(const fs::path& path, const std::vector<PersonRecord>& persons) {
  CsvWriter w(path);
  std::vector<std::string> header{"area_id", "psu_id", "household_id", "person_id", "weight", "poor"};
  const auto K = persons.empty() ? 0 : persons.front().scores.size();
  for (Eigen::Index k = 0; k < K; ++k) header.push_back(fmt::format("score_{}", k + 1));
  w.row(header);
  for (const auto& p : persons) {
    std::vector<std::string> cells{p.area_id, p.psu_id, p.household_id, p.person_id, format_number(p.weight),
                                   std::to_string(p.poor)};
    for (Eigen::Index k = 0; k < K; ++k) cells.push_back(format_number(p.scores(k)));
    w.row(cells);
  }
}

// ---------------------------------------------------------------------------

const AreaRecord& AreasTable::find(const std::string& area_id) const {
  for (const auto& r : rows)
    if (r.area_id == area_id) return r;
  throw DataError("area '" + area_id + "' is missing from the areas table");
}

bool AreasTable::contains(const std::string& area_id) const {
  return std::any_of(rows.begin(), rows.end(), [&](const AreaRecord& r) { return r.area_id == area_id; });
}

MatrixXd AreasTable::design_matrix(const std::vector<std::string>& area_ids, const std::vector<std::string>& names) const {
  std::vector<Eigen::Index> cols;
  for (const auto& n : names) {
    const auto it = std::find(covariate_names.begin(), covariate_names.end(), n);
    if (it == covariate_names.end()) throw UsageError("covariate '" + n + "' is not a column of the areas table");
    cols.push_back(it - covariate_names.begin());
  }
  MatrixXd X(static_cast<Eigen::Index>(area_ids.size()), static_cast<Eigen::Index>(names.size() + 1));
  for (std::size_t i = 0; i < area_ids.size(); ++i) {
    const auto& rec = find(area_ids[i]);
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t j = 0; j < cols.size(); ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = rec.covariates(cols[j]);
  }
  return X;
}

AreasTable read_areas(const fs::path& path) {
  const auto t = read_csv(path);
  const std::string file = path.string();
  const auto c_area = t.column("area_id", file);
  const auto c_district = t.find_column("district_id");
  const auto c_pop = t.find_column("population");
  AreasTable areas;
  std::vector<std::size_t> c_cov;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j == c_area || (c_district && j == *c_district) || (c_pop && j == *c_pop)) continue;
    c_cov.push_back(j);
    areas.covariate_names.push_back(t.header[j]);
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    AreaRecord a;
    a.area_id = row[c_area];
    if (areas.contains(a.area_id)) throw DataError(fmt::format("{}: duplicate area_id '{}'", file, a.area_id));
    if (c_district) a.district_id = row[*c_district];
    if (c_pop && !row[*c_pop].empty()) a.population = parse_number(row[*c_pop], file, r + 1, "population");
    a.covariates.resize(static_cast<Eigen::Index>(c_cov.size()));
    for (std::size_t j = 0; j < c_cov.size(); ++j)
      a.covariates(static_cast<Eigen::Index>(j)) = parse_number(row[c_cov[j]], file, r + 1, t.header[c_cov[j]]);
    areas.rows.push_back(std::move(a));
  }
  return areas;
}

void write_areas(const fs::path& path, const AreasTable& areas) {
  CsvWriter w(path);
  std::vector<std::string> header{"area_id", "district_id", "population"};
  header.insert(header.end(), areas.covariate_names.begin(), areas.covariate_names.end());
  w.row(header);
  for (const auto& a : areas.rows) {
    std::vector<std::string> cells{a.area_id, a.district_id, a.population ? format_number(*a.population) : ""};
    for (Eigen::Index j = 0; j < a.covariates.size(); ++j) cells.push_back(format_number(a.covariates(j)));
    w.row(cells);
  }
}

// ---------------------------------------------------------------------------

void write_design_summary(const fs::path& path, const DesignSummaryTable& table) {
  CsvWriter w(path);
  std::vector<std::string> header{"area_id", "n_households", "n_adjusted", "z_direct", "z_direct_se", "D_smoothed"};
  const int K = table.K;
  for (int k = 0; k < K; ++k) header.push_back(fmt::format("y_{}", k + 1));
  for (int k = 0; k < K; ++k)
    for (int l = 0; l <= k; ++l) header.push_back(fmt::format("sigma_{}_{}", k + 1, l + 1));
  w.row(header);
  for (const auto& a : table.areas) {
    std::vector<std::string> cells{a.area_id,
                                   std::to_string(a.n_households),
                                   format_number(a.n_adjusted),
                                   format_number(a.z_direct),
                                   format_number(a.z_direct_se),
                                   format_number(a.D_smoothed)};
    for (int k = 0; k < K; ++k) cells.push_back(a.y_direct ? format_number((*a.y_direct)(k)) : "");
    for (int k = 0; k < K; ++k)
      for (int l = 0; l <= k; ++l) cells.push_back(a.sigma_hat ? format_number((*a.sigma_hat)(k, l)) : "");
    w.row(cells);
  }
}

nlohmann::json design_effects_to_json(const DesignEffects& fx) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json pairs = nlohmann::json::array();
  nlohmann::json s_pairs = nlohmann::json::array();
  for (Eigen::Index k = 0; k < fx.deff_pairs.rows(); ++k) {
    pairs.push_back(vec(fx.deff_pairs.row(k).transpose()));
    s_pairs.push_back(vec(fx.pooled_s_pairs.row(k).transpose()));
  }
  return {{"deff_poverty", fx.deff_poverty}, {"deff_dims", vec(fx.deff_dims)}, {"deff_pairs", pairs},
          {"pooled_p", fx.pooled_p},         {"pooled_s", vec(fx.pooled_s)},   {"pooled_s_pairs", s_pairs},
          {"poor_count", fx.poor_count}};
}

DesignEffects design_effects_from_json(const nlohmann::json& j) {
  DesignEffects fx;
  try {
    fx.deff_poverty = j.at("deff_poverty").get<double>();
    fx.pooled_p = j.at("pooled_p").get<double>();
    fx.poor_count = j.at("poor_count").get<int>();
    const auto dims = j.at("deff_dims").get<std::vector<double>>();
    const auto s = j.at("pooled_s").get<std::vector<double>>();
    const auto K = static_cast<Eigen::Index>(dims.size());
    fx.deff_dims = Eigen::Map<const VectorXd>(dims.data(), K);
    fx.pooled_s = Eigen::Map<const VectorXd>(s.data(), K);
    fx.deff_pairs = MatrixXd::Zero(K, K);
    fx.pooled_s_pairs = MatrixXd::Zero(K, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto row = j.at("deff_pairs").at(k).get<std::vector<double>>();
      const auto srow = j.at("pooled_s_pairs").at(k).get<std::vector<double>>();
      for (Eigen::Index l = 0; l < K; ++l) {
        fx.deff_pairs(k, l) = row.at(l);
        fx.pooled_s_pairs(k, l) = srow.at(l);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed design effects JSON: ") + e.what());
  }
  return fx;
}

DesignSummaryTable read_design_summary(const fs::path& csv, const fs::path& effects_json) {
  const auto t = read_csv(csv);
  const std::string file = csv.string();
  DesignSummaryTable table;
  table.effects = design_effects_from_json(read_json(effects_json));
  int K = 0;
  while (t.find_column(fmt::format("y_{}", K + 1))) ++K;
  table.K = K;
  const auto c_area = t.column("area_id", file);
  const auto c_n = t.column("n_households", file);
  const auto c_nt = t.column("n_adjusted", file);
  const auto c_z = t.column("z_direct", file);
  const auto c_se = t.column("z_direct_se", file);
  const auto c_D = t.column("D_smoothed", file);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    AreaDesignSummary a;
    a.area_id = row[c_area];
    a.n_households = static_cast<int>(parse_number(row[c_n], file, r + 1, "n_households"));
    a.n_adjusted = parse_number(row[c_nt], file, r + 1, "n_adjusted");
    a.z_direct = parse_number(row[c_z], file, r + 1, "z_direct");
    a.z_direct_se = parse_number(row[c_se], file, r + 1, "z_direct_se");
    a.D_smoothed = parse_number(row[c_D], file, r + 1, "D_smoothed");
    if (K > 0 && !row[t.column("y_1", file)].empty()) {
      VectorXd y(K);
      MatrixXd S(K, K);
      for (int k = 0; k < K; ++k) {
        const auto name = fmt::format("y_{}", k + 1);
        y(k) = parse_number(row[t.column(name, file)], file, r + 1, name);
        for (int l = 0; l <= k; ++l) {
          const auto sname = fmt::format("sigma_{}_{}", k + 1, l + 1);
          S(k, l) = S(l, k) = parse_number(row[t.column(sname, file)], file, r + 1, sname);
        }
      }
      a.y_direct = y;
      a.sigma_hat = S;
    }
    table.areas.push_back(std::move(a));
  }
  return table;
}

// ---------------------------------------------------------------------------

void write_draws_csv(const fs::path& path, const PosteriorDraws& draws) {
  CsvWriter w(path);
  std::vector<std::string> header{"chain", "iter"};
  header.insert(header.end(), draws.parameter_names.begin(), draws.parameter_names.end());
  w.row(header);
  for (int c = 0; c < draws.num_chains(); ++c) {
    for (int r = 0; r < draws.draws_per_chain(); ++r) {
      std::vector<std::string> cells{std::to_string(c + 1), std::to_string(r + 1)};
      for (int j = 0; j < draws.dim(); ++j) cells.push_back(format_number(draws.chains[c](r, j)));
      w.row(cells);
    }
  }
}

PosteriorDraws read_draws_csv(const fs::path& path) {
  const auto t = read_csv(path);
  const std::string file = path.string();
  const auto c_chain = t.column("chain", file);
  const auto c_iter = t.column("iter", file);
  PosteriorDraws draws;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j == c_chain || j == c_iter) continue;
    cols.push_back(j);
    draws.parameter_names.push_back(t.header[j]);
  }
  std::map<int, std::vector<std::vector<double>>> by_chain;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int chain = static_cast<int>(parse_number(t.rows[r][c_chain], file, r + 1, "chain"));
    std::vector<double> vals;
    for (auto j : cols) vals.push_back(parse_number(t.rows[r][j], file, r + 1, t.header[j]));
    by_chain[chain].push_back(std::move(vals));
  }
  for (auto& [chain, rows] : by_chain) {
    MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < cols.size(); ++j) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
    draws.chains.push_back(std::move(m));
    draws.divergences.push_back(0);
  }
  const auto n = draws.chains.empty() ? 0 : draws.chains.front().rows();
  for (const auto& m : draws.chains)
    if (m.rows() != n) throw DataError(file + ": chains have different numbers of draws");
  return draws;
}

nlohmann::json draws_sidecar(const PosteriorDraws& draws, const SamplerConfig& config) {
  nlohmann::json j;
  j["step_size"] = draws.step_size;
  j["divergences"] = draws.divergences;
  j["mean_accept_stat"] = draws.mean_accept;
  nlohmann::json metric = nlohmann::json::array();
  for (const auto& v : draws.inv_metric) metric.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  j["inv_metric_diag"] = metric;
  j["config"] = {{"chains", config.chains},
                 {"iterations", config.iterations},
                 {"warmup", config.warmup},
                 {"seed", config.seed},
                 {"target_accept", config.target_accept},
                 {"max_leapfrog", config.max_leapfrog},
                 {"init_radius", config.init_radius},
                 {"algorithm", config.nuts ? "nuts" : "static"},
                 {"fixed_steps", config.fixed_steps},
                 {"rng", "mt19937_64 seeded by seed_seq{seed_lo, seed_hi, chain, 0}"}};
  return j;
}

void write_matrix_csv(const fs::path& path, const MatrixXd& m, const std::vector<std::string>& header) {
  CsvWriter w(path);
  w.row(header);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<std::string> cells;
    for (Eigen::Index c = 0; c < m.cols(); ++c) cells.push_back(format_number(m(r, c)));
    w.row(cells);
  }
}

MatrixXd read_matrix_csv(const fs::path& path, std::vector<std::string>* header) {
  const auto t = read_csv(path);
  if (header) *header = t.header;
  MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_number(t.rows[r][c], path.string(), r + 1, t.header[c]);
  return m;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open {}", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw UsageError(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

namespace {

std::string finish_digest(EVP_MD_CTX* ctx) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace

std::string sha256_string(const std::string& data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx.get(), data.data(), data.size());
  return finish_digest(ctx.get());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open {}", path.string()));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return finish_digest(ctx.get());
}

}  // namespace povmap
