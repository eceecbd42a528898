#include "cli_runner.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace povmap;
using povmap::testing::data_digests;
using povmap::testing::manifest_without_time;
using povmap::testing::run_cli;
using povmap::testing::scratch_dir;

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A small simulated survey shared by the tests in this file.
const fs::path& small_survey() {
  static const fs::path dir = [] {
    const auto root = scratch_dir("cli_survey");
    write_text(root / "sim.json", R"({"m_areas": 8, "districts": 2, "households_per_area": {"min": 5, "max": 30}})");
    const auto r = run_cli(fmt::format("simulate --config {} --seed 5 --out {}", (root / "sim.json").string(),
                                       (root / "sim").string()));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    return root / "sim";
  }();
  return dir;
}

std::string fit_args(const std::string& family, const fs::path& out, int iter = 200, int warmup = 100,
                     int seed = 3) {
  const auto& s = small_survey();
  return fmt::format("fit --persons {} --areas {} --family {} --iter {} --warmup {} --seed {} --out {}",
                     (s / "persons.csv").string(), (s / "areas.csv").string(), family, iter, warmup, seed,
                     out.string());
}

}  // namespace

TEST_CASE("version and usage") {
  CHECK(run_cli("--version").exit_code == 0);
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("direct --out /tmp/x").exit_code == 2);
}

TEST_CASE("direct: K = 1 with empty optional scores") {
  const auto dir = scratch_dir("cli_k1");
  write_text(dir / "persons.csv",
             "area_id,psu_id,household_id,person_id,weight,poor,score_1\n"
             "A,1,h1,p1,2.0,1,0.4\n"
             "A,1,h1,p2,2.0,1,0.6\n"
             "A,2,h2,p3,1.5,0,\n"
             "B,1,h3,p4,3.0,1,0.2\n"
             "B,2,h4,p5,3.0,0,\n"
             "B,2,h5,p6,1.0,1,0.5\n");
  const auto r = run_cli(fmt::format("direct --persons {} --out {}", (dir / "persons.csv").string(),
                                     (dir / "out").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  const auto table = read_csv(dir / "out" / "design_summary.csv");
  CHECK(table.find_column("y_1").has_value());
  CHECK(table.find_column("sigma_1_1").has_value());
  CHECK(table.rows.size() == 2);
  CHECK(fs::exists(dir / "out" / "manifest.json"));
}

TEST_CASE("direct: a missing column exits 2 and names it") {
  const auto dir = scratch_dir("cli_missing");
  write_text(dir / "persons.csv", "area_id,psu_id,household_id,person_id,poor\nA,1,h1,p1,1\n");
  const auto r = run_cli(fmt::format("direct --persons {} --out {}", (dir / "persons.csv").string(),
                                     (dir / "out").string()));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("weight") != std::string::npos);
}

TEST_CASE("direct: malformed values exit 3 with the row") {
  const auto dir = scratch_dir("cli_badrow");
  write_text(dir / "persons.csv",
             "area_id,psu_id,household_id,person_id,weight,poor\nA,1,h1,p1,1.0,1\nA,2,h2,p2,heavy,0\n");
  const auto r = run_cli(fmt::format("direct --persons {} --out {}", (dir / "persons.csv").string(),
                                     (dir / "out").string()));
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("row 2") != std::string::npos);
}

TEST_CASE("direct: outputs are stable across runs") {
  const auto& s = small_survey();
  const auto dir = scratch_dir("cli_direct_twice");
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli(fmt::format("direct --persons {} --areas {} --out {}", (s / "persons.csv").string(),
                                       (s / "areas.csv").string(), (dir / name).string()));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  }
  CHECK(data_digests(dir / "a") == data_digests(dir / "b"));
  auto ma = manifest_without_time(dir / "a");
  auto mb = manifest_without_time(dir / "b");
  CHECK(ma["outputs"] == mb["outputs"]);
  CHECK(ma["config_sha256"] == mb["config_sha256"]);
  CHECK(ma["inputs"]["persons"]["sha256"] == sha256_file(s / "persons.csv"));
}

TEST_CASE("fit: short smoke run writes every artifact") {
  const auto dir = scratch_dir("cli_fit_smoke");
  const auto r = run_cli(fit_args("NL_RS", dir / "fit", 20, 10));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  for (const char* f : {"draws.csv", "draws.json", "summary.csv", "diagnostics.json", "fit.json", "log_lik.csv",
                        "manifest.json"})
    CHECK_MESSAGE(fs::exists(dir / "fit" / f), f);
  const auto diag = read_json(dir / "fit" / "diagnostics.json");
  CHECK(diag["rhat_variant"] == "split");
  const auto summary = read_csv(dir / "fit" / "summary.csv");
  CHECK(summary.header.front() == "name");
  CHECK(summary.find_column("Rhat").has_value());
  CHECK(summary.find_column("n_eff").has_value());
  CHECK(summary.find_column("se_mean").has_value());
}

TEST_CASE("fit: same seed gives identical draws, another seed does not") {
  const auto dir = scratch_dir("cli_fit_seed");
  REQUIRE(run_cli(fit_args("NL", dir / "a", 60, 30, 9)).exit_code == 0);
  REQUIRE(run_cli(fit_args("NL", dir / "b", 60, 30, 9)).exit_code == 0);
  REQUIRE(run_cli(fit_args("NL", dir / "c", 60, 30, 10)).exit_code == 0);
  CHECK(slurp(dir / "a" / "draws.csv") == slurp(dir / "b" / "draws.csv"));
  CHECK(data_digests(dir / "a") == data_digests(dir / "b"));
  CHECK(slurp(dir / "a" / "draws.csv") != slurp(dir / "c" / "draws.csv"));
}

TEST_CASE("fit: thread count does not change the draws") {
  const auto dir = scratch_dir("cli_fit_threads");
  REQUIRE(run_cli(fit_args("FH", dir / "a", 60, 30) + " --threads 1").exit_code == 0);
  REQUIRE(run_cli(fit_args("FH", dir / "b", 60, 30) + " --threads 4").exit_code == 0);
  CHECK(slurp(dir / "a" / "draws.csv") == slurp(dir / "b" / "draws.csv"));
}

TEST_CASE("fit: configuration errors exit 2") {
  const auto dir = scratch_dir("cli_fit_errors");
  CHECK(run_cli(fit_args("NOT_A_FAMILY", dir / "x")).exit_code == 2);
  CHECK(run_cli(fit_args("NL", dir / "x", 10, 10)).exit_code == 2);
  write_text(dir / "bad.json", R"({"family": "NL", "colour": "blue"})");
  const auto& s = small_survey();
  const auto r = run_cli(fmt::format("fit --persons {} --areas {} --config {} --out {}", (s / "persons.csv").string(),
                                     (s / "areas.csv").string(), (dir / "bad.json").string(),
                                     (dir / "y").string()));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("colour") != std::string::npos);
}

TEST_CASE("compare: needs two fits, identity and argument order") {
  const auto dir = scratch_dir("cli_compare");
  REQUIRE(run_cli(fit_args("NL_RS", dir / "rs")).exit_code == 0);
  REQUIRE(run_cli(fit_args("FH", dir / "fh")).exit_code == 0);
  REQUIRE(run_cli(fit_args("NL", dir / "nl")).exit_code == 0);

  CHECK(run_cli(fmt::format("compare {} --out {}", (dir / "rs").string(), (dir / "c0").string())).exit_code == 2);

  auto r = run_cli(fmt::format("compare {} {} --out {}", (dir / "rs").string(), (dir / "rs").string(),
                               (dir / "self").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  const auto self = read_csv(dir / "self" / "comparison.csv");
  CHECK(self.header == std::vector<std::string>{"model", "elpd_diff", "se_diff"});
  for (const auto& row : self.rows) {
    CHECK(std::stod(row[1]) == 0.0);
    CHECK(std::stod(row[2]) == 0.0);
  }

  r = run_cli(fmt::format("compare {} {} {} --out {}", (dir / "rs").string(), (dir / "fh").string(),
                          (dir / "nl").string(), (dir / "c1").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  r = run_cli(fmt::format("compare {} {} {} --out {}", (dir / "nl").string(), (dir / "rs").string(),
                          (dir / "fh").string(), (dir / "c2").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(data_digests(dir / "c1") == data_digests(dir / "c2"));
  const auto rows = read_csv(dir / "c1" / "comparison.csv").rows;
  REQUIRE(rows.size() == 3);
  CHECK(std::stod(rows[0][1]) == 0.0);
  for (const auto& row : rows) CHECK(std::stod(row[1]) <= 0.0);
  const auto pointwise = read_csv(dir / "c1" / "loo_pointwise_1.csv");
  CHECK(pointwise.header == std::vector<std::string>{"area_id", "elpd_i", "pareto_k"});
  CHECK(pointwise.rows.size() == 8);
}

TEST_CASE("report: CSVs without a map, GeoJSON with an unmatched feature") {
  const auto& s = small_survey();
  const auto dir = scratch_dir("cli_report");
  REQUIRE(run_cli(fit_args("NL_RS", dir / "fit")).exit_code == 0);

  auto r = run_cli(fmt::format("report --fit {} --areas {} --persons {} --out {}", (dir / "fit").string(),
                               (s / "areas.csv").string(), (s / "persons.csv").string(), (dir / "plain").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(fs::exists(dir / "plain" / "estimates.csv"));
  CHECK(fs::exists(dir / "plain" / "districts.csv"));
  CHECK(fs::exists(dir / "plain" / "sampling_sd.csv"));
  CHECK_FALSE(fs::exists(dir / "plain" / "map.geojson"));
  const auto est = read_csv(dir / "plain" / "estimates.csv");
  CHECK(est.header ==
        std::vector<std::string>{"area_id", "mean", "sd", "q2.5", "q16", "q84", "q97.5", "n_eff", "rhat"});

  // districts.csv: bm_ratio is the estimate over the direct value
  const auto districts = read_csv(dir / "plain" / "districts.csv");
  const auto c_est = districts.column("estimate", "districts.csv");
  const auto c_dir = districts.column("direct", "districts.csv");
  const auto c_bm = districts.column("bm_ratio", "districts.csv");
  for (const auto& row : districts.rows)
    CHECK(std::abs(std::stod(row[c_bm]) - std::stod(row[c_est]) / std::stod(row[c_dir])) < 1e-12);

  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  const auto areas = read_areas(s / "areas.csv");
  for (const auto& a : areas.rows)
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", {{"area_id", a.area_id}}},
                              {"geometry", {{"type", "Point"}, {"coordinates", {1.5, 2.5}}}}});
  fc["features"].push_back({{"type", "Feature"},
                            {"properties", {{"area_id", "ATLANTIS"}}},
                            {"geometry", {{"type", "Point"}, {"coordinates", {0.0, 0.0}}}}});
  write_json(dir / "map.geojson", fc);
  r = run_cli(fmt::format("report --fit {} --areas {} --persons {} --geojson {} --out {}", (dir / "fit").string(),
                          (s / "areas.csv").string(), (s / "persons.csv").string(), (dir / "map.geojson").string(),
                          (dir / "mapped").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(r.output.find("ATLANTIS") != std::string::npos);
  const auto out = read_json(dir / "mapped" / "map.geojson");
  CHECK(out["type"] == "FeatureCollection");
  CHECK(out["features"].size() == fc["features"].size());
  CHECK(out["features"].back()["properties"]["estimate"].is_null());
  CHECK(out["features"][0]["properties"]["estimate"].is_number());
  CHECK(out["features"][0]["geometry"] == fc["features"][0]["geometry"]);
}

TEST_CASE("simulate: determinism, invalid correlation, validation") {
  const auto dir = scratch_dir("cli_simulate");
  REQUIRE(run_cli(fmt::format("simulate --seed 4 --out {}", (dir / "a").string())).exit_code == 0);
  REQUIRE(run_cli(fmt::format("simulate --seed 4 --out {}", (dir / "b").string())).exit_code == 0);
  CHECK(data_digests(dir / "a") == data_digests(dir / "b"));
  CHECK(manifest_without_time(dir / "a") == manifest_without_time(dir / "b"));

  write_text(dir / "bad.json", R"({"true_rho": [0.9, 0.9, -0.9]})");
  const auto bad = run_cli(fmt::format("simulate --config {} --out {}", (dir / "bad.json").string(),
                                       (dir / "c").string()));
  CHECK(bad.exit_code == 2);

  write_text(dir / "small.json", R"({"m_areas": 6, "districts": 2, "households_per_area": {"min": 20, "max": 75}})");
  const auto v = run_cli(fmt::format("simulate --config {} --validate 200 --out {}", (dir / "small.json").string(),
                                     (dir / "v").string()));
  REQUIRE_MESSAGE(v.exit_code == 0, v.output);
  CHECK(v.output.find("validation:") != std::string::npos);
  const auto report = read_json(dir / "v" / "validation.json");
  CHECK(report["replications"] == 200);
  CHECK(report["areas"].size() == 6);
  CHECK(report["overall"]["within_3se"] == true);
}

TEST_CASE("report: contribution shares from a multivariate fit") {
  const auto& s = small_survey();
  const auto dir = scratch_dir("cli_report_mv");
  REQUIRE(run_cli(fit_args("NL_RS", dir / "rs")).exit_code == 0);
  auto r = run_cli(fit_args("MV_LOGIT", dir / "mv"));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  r = run_cli(fmt::format("report --fit {} --mv-fit {} --areas {} --out {}", (dir / "rs").string(),
                          (dir / "mv").string(), (s / "areas.csv").string(), (dir / "out").string()));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  const auto table = read_csv(dir / "out" / "contributions.csv");
  CHECK(table.rows.size() == 8);
  for (const auto& row : table.rows) {
    double total = 0.0;
    for (const char* col : {"md", "sd", "hc"}) total += std::stod(row[table.column(col, "contributions.csv")]);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK(read_csv(dir / "out" / "theta_estimates.csv").rows.size() == 24);
}
