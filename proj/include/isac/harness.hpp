#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "isac/baselines.hpp"
#include "isac/metrics.hpp"

namespace isac {

struct HyperDefaults {
  double a = 1.0;
  double b = 1.0;
  double abar = 1.0;
  double bbar = 1e-5;
  double c = 1e-6;
  double d = 1e-6;
  double lambda_grid = 0.5;
  double lambda0 = 0.5;
  double lambda_mb = 0.1;

  HyperParams make(int Q, int UV) const;
};

struct SweepConfig {
  std::vector<std::string> variants{"mrf", "iid"};
  std::vector<double> snr_db{-5.0};
  std::vector<int> overlaps{0};
  int trials = 100;
  std::uint64_t seed = 1;
  std::string out_dir = "results";
};

struct ExperimentConfig {
  std::string preset = "desk";
  ArrayConfig array{16};
  OfdmConfig ofdm;
  int pilot_interval = 16;
  SceneConfig scene;
  AngleDelayConfig angle_delay;
  HyperDefaults hyper;
  EstimatorConfig estimator;
  SweepConfig sweep;

  static ExperimentConfig desk();
  static ExperimentConfig paper();
  static ExperimentConfig from_preset(const std::string& name);

  /// Fills the pilot sets from pilot_interval.
  void finalize();
  void validate() const;
  int num_cells() const;
};

/// Reads a JSON config; keys not present keep the values of the named (or given) preset.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical config text with the output directory removed.
std::string config_hash(const ExperimentConfig& cfg);

const char* code_version();

/// Everything a trial needs, regenerated from (config, snr, overlap, seed).
struct TrialData {
  Scene scene;
  PilotSet pilots;
  PositionGrid grid;
  AngleDelayGrid ad;
  std::shared_ptr<ModelBuilder> builder;
  Observation obs;
  Observation clean;
  VariantInputs inputs;
};

std::uint64_t trial_seed(std::uint64_t base, int trial);
TrialData prepare_trial(const ExperimentConfig& cfg, double snr_db, int overlap,
                        std::uint64_t seed);

struct TrialOutcome {
  MetricsRecord metrics;
  EstimateResult estimate;
};

TrialOutcome run_trial(const ExperimentConfig& cfg, const std::string& variant, double snr_db,
                       int overlap, std::uint64_t seed);

std::string metrics_to_json(const MetricsRecord& m);

struct SweepCell {
  std::string variant;
  double snr_db = 0.0;
  int overlap = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  std::string key() const;
};

std::vector<SweepCell> enumerate_cells(const ExperimentConfig& cfg);

struct SweepSummary {
  int total = 0;
  int skipped = 0;
  int ran = 0;
  int failed = 0;
  double seconds = 0.0;
  std::vector<MetricsRecord> records;  // all rows in the csv after the sweep
};

/// Worker cap from ISAC_WORKERS, else the hardware concurrency.
int worker_count();

/// Runs every cell not already recorded in <out_dir>/manifest.json.
SweepSummary sweep(const ExperimentConfig& cfg, int workers = -1,
                   const std::function<void(const MetricsRecord&)>& on_row = {});

inline constexpr const char* kCsvSchema = "isac-results/1";
std::string csv_header();
std::string csv_row(const MetricsRecord& m);
MetricsRecord parse_csv_row(const std::string& line);
std::vector<MetricsRecord> load_csv(const std::string& path);

}  // namespace isac
