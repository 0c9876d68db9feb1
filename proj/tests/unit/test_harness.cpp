#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "isac/harness.hpp"

using namespace isac;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isac-unit-" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_sweep(const fs::path& dir) {
  ExperimentConfig c = ExperimentConfig::desk();
  c.estimator.outer_iterations = 1;
  c.estimator.inner_iterations = 1;
  c.sweep.variants = {"omp", "iid"};
  c.sweep.snr_db = {0.0, 10.0};
  c.sweep.overlaps = {0};
  c.sweep.trials = 2;
  c.sweep.seed = 5;
  c.sweep.out_dir = dir.string();
  c.finalize();
  return c;
}

}  // namespace

TEST_CASE("presets and validation") {
  const ExperimentConfig d = ExperimentConfig::desk();
  CHECK(d.array.num_antennas == 16);
  CHECK(d.ofdm.num_subcarriers == 256);
  CHECK(d.angle_delay.U == 16);
  CHECK(d.angle_delay.V == 8);
  CHECK(d.scene.num_targets == 4);
  CHECK(d.scene.num_scatterers == 5);
  CHECK(d.scene.num_multibounce == 1);
  CHECK(d.estimator.inner_iterations == 5);
  CHECK(d.estimator.epsilon == 1e-2);
  const ExperimentConfig p = ExperimentConfig::paper();
  CHECK(p.preset == "paper");
  CHECK(config_hash(p) != config_hash(d));
  CHECK_THROWS_AS(ExperimentConfig::from_preset("huge"), ConfigError);
  CHECK(d.hyper.bbar == 1e-5);
  CHECK(d.hyper.c == 1e-6);
}

TEST_CASE("config json round trip and errors") {
  ExperimentConfig c = ExperimentConfig::desk();
  c.sweep.trials = 7;
  c.estimator.alpha0 = 0.123456789012345;
  c.finalize();
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));

  const ExperimentConfig partial = config_from_json(R"({"sweep": {"trials": 3}})");
  CHECK(partial.sweep.trials == 3);
  CHECK(partial.array.num_antennas == ExperimentConfig::desk().array.num_antennas);
  CHECK(config_from_json(R"({"preset": "paper"})").preset == "paper");

  CHECK_THROWS_AS(config_from_json(R"({"sweeps": {}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"sweep": {"trails": 3}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"sweep": {"trials": "many"}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"array": {"num_antennas": 0}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/isac.json"), std::exception);
}

TEST_CASE("config hash ignores the output directory only") {
  ExperimentConfig a = ExperimentConfig::desk();
  ExperimentConfig b = a;
  b.sweep.out_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.sweep.seed = 99;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 16u);
}

TEST_CASE("trial seeds and prepared trials are reproducible") {
  CHECK(trial_seed(1, 0) != trial_seed(1, 1));
  CHECK(trial_seed(1, 0) != trial_seed(2, 0));
  CHECK(trial_seed(3, 4) == trial_seed(3, 4));
  ExperimentConfig c = ExperimentConfig::desk();
  c.finalize();
  const TrialData a = prepare_trial(c, 0.0, 1, 11);
  const TrialData b = prepare_trial(c, 0.0, 1, 11);
  CHECK(a.obs.y_r == b.obs.y_r);
  CHECK(a.obs.y_c == b.obs.y_c);
  CHECK(scene_to_json(a.scene) == scene_to_json(b.scene));
  CHECK(a.inputs.noise_energy_r > 0.0);
  CHECK(a.inputs.genie.has_value());
}

TEST_CASE("cell enumeration") {
  const ExperimentConfig c = tiny_sweep(scratch_dir("cells"));
  const auto cells = enumerate_cells(c);
  CHECK(cells.size() == static_cast<std::size_t>(c.num_cells()));
  CHECK(cells.size() == 8u);
  // both variants of a trial share the scene seed
  CHECK(cells[0].seed == cells[1].seed);
  CHECK(cells[0].key() != cells[1].key());
  CHECK(cells[0].seed == trial_seed(5, 0));
}

TEST_CASE("csv rows round trip exactly") {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    MetricsRecord m;
    m.variant = rep % 2 ? "mrf" : "omp";
    m.snr_db = -5.0 + rep;
    m.overlap = rep % 5;
    m.trial = rep;
    m.seed = rng();
    m.rmse_target = rep % 7 == 0 ? std::nan("") : u(rng) * 3;
    m.rmse_scatterer = u(rng) / 3.0;
    m.nmse_radar = u(rng) * 1e-3;
    m.nmse_comm = u(rng);
    m.miss_rate = u(rng);
    m.false_alarm_rate = u(rng) * 1e-2;
    m.runtime_per_iteration = u(rng);
    m.iterations = rep;
    m.converged = rep % 3 == 0;
    m.error = rep % 11 == 0 ? "bad, thing" : "";
    const MetricsRecord b = parse_csv_row(csv_row(m));
    CHECK(b.variant == m.variant);
    CHECK(b.snr_db == m.snr_db);
    CHECK(b.seed == m.seed);
    CHECK((b.rmse_target == m.rmse_target || (std::isnan(b.rmse_target) && std::isnan(m.rmse_target))));
    CHECK(b.rmse_scatterer == m.rmse_scatterer);
    CHECK(b.nmse_radar == m.nmse_radar);
    CHECK(b.nmse_comm == m.nmse_comm);
    CHECK(b.miss_rate == m.miss_rate);
    CHECK(b.false_alarm_rate == m.false_alarm_rate);
    CHECK(b.runtime_per_iteration == m.runtime_per_iteration);
    CHECK(b.iterations == m.iterations);
    CHECK(b.converged == m.converged);
    CHECK(b.error == (rep % 11 == 0 ? "bad; thing" : ""));
    CHECK(csv_row(b) == csv_row(parse_csv_row(csv_row(b))));
  }
  CHECK_THROWS_AS(parse_csv_row("mrf,1,2"), ConfigError);
}

TEST_CASE("csv files need the schema line") {
  const fs::path d = scratch_dir("csv");
  fs::create_directories(d);
  {
    std::ofstream f(d / "a.csv");
    f << csv_header() << '\n';
  }
  CHECK_THROWS_AS(load_csv((d / "a.csv").string()), ConfigError);
  {
    std::ofstream f(d / "b.csv");
    f << "# " << kCsvSchema << '\n' << csv_header() << '\n' << csv_row(MetricsRecord{}) << '\n';
  }
  CHECK(load_csv((d / "b.csv").string()).size() == 1u);
  fs::remove_all(d);
}

TEST_CASE("worker count honors the environment") {
  const char* old = std::getenv("ISAC_WORKERS");
  const std::string keep = old ? old : "";
  setenv("ISAC_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("ISAC_WORKERS", "zero", 1);
  CHECK_THROWS_AS(worker_count(), ConfigError);
  setenv("ISAC_WORKERS", "0", 1);
  CHECK_THROWS_AS(worker_count(), ConfigError);
  unsetenv("ISAC_WORKERS");
  CHECK(worker_count() >= 1);
  if (old) setenv("ISAC_WORKERS", keep.c_str(), 1);
}

TEST_CASE("sweep writes every cell once and resumes") {
  const fs::path dir = scratch_dir("sweep");
  const ExperimentConfig c = tiny_sweep(dir);
  const SweepSummary first = sweep(c, 1);
  CHECK(first.total == 8);
  CHECK(first.ran == 8);
  CHECK(first.skipped == 0);
  CHECK(first.failed == 0);
  const auto rows = load_csv((dir / "results.csv").string());
  CHECK(rows.size() == 8u);
  CHECK(fs::exists(dir / "manifest.json"));

  const SweepSummary again = sweep(c, 1);
  CHECK(again.ran == 0);
  CHECK(again.skipped == 8);
  const auto rows2 = load_csv((dir / "results.csv").string());
  REQUIRE(rows2.size() == 8u);
  for (std::size_t i = 0; i < 8; ++i) CHECK(csv_row(rows2[i]) == csv_row(rows[i]));

  // a grown sweep runs only the new cells
  ExperimentConfig more = c;
  more.sweep.trials = 3;
  CHECK_THROWS_AS(sweep(more, 1), ConfigError);  // different config, same directory

  // a truncated csv is repaired from the manifest
  {
    std::ofstream f(dir / "results.csv", std::ios::trunc);
    f << "# " << kCsvSchema << '\n' << csv_header() << '\n';
    for (std::size_t i = 0; i < 5; ++i) f << csv_row(rows[i]) << '\n';
  }
  const SweepSummary repaired = sweep(c, 1);
  CHECK(repaired.skipped == 5);
  CHECK(repaired.ran == 3);
  CHECK(load_csv((dir / "results.csv").string()).size() == 8u);
  fs::remove_all(dir);
}

TEST_CASE("failed cells become error rows") {
  const fs::path dir = scratch_dir("fail");
  ExperimentConfig c = tiny_sweep(dir);
  c.sweep.variants = {"iid"};
  c.sweep.snr_db = {std::nan("")};  // noise precision becomes NaN inside the trial
  c.sweep.trials = 1;
  const SweepSummary s = sweep(c, 1);
  CHECK(s.failed == 1);
  REQUIRE(s.records.size() == 1u);
  CHECK_FALSE(s.records[0].error.empty());
  CHECK(std::isnan(s.records[0].nmse_comm));
  CHECK(load_csv((dir / "results.csv").string()).size() == 1u);

  c.sweep.snr_db = {0.0};
  c.sweep.variants = {"non_relaxed"};
  c.estimator.dense_cap = 10;
  CHECK_THROWS_AS(sweep(c, 1), ConfigError);  // rejected before any cell runs
  fs::remove_all(dir);
}

TEST_CASE("metrics json") {
  MetricsRecord m;
  m.variant = "mrf";
  m.nmse_comm = 0.01;
  m.nmse_radar = 0.0;
  const std::string j = metrics_to_json(m);
  CHECK(j.find("\"nmse_comm_db\": -20") != std::string::npos);
  CHECK(j.find("\"nmse_radar_db\": null") != std::string::npos);
  CHECK(j.find("\"variant\": \"mrf\"") != std::string::npos);
}
