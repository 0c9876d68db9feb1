#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isac/turbo.hpp"

namespace isac {

struct DetectionRates {
  double miss_rate = 0.0;
  double false_alarm_rate = 0.0;
  int misses = 0;
  int num_true = 0;
  int false_alarms = 0;
  int num_empty = 0;
};

/// Detection iff posterior > 0.5. Duplicate truth indices count once.
DetectionRates compute_detection(const VecR& q_support, const std::vector<int>& truth_cells);

inline constexpr double kMatchGate = 10.0;

struct RmseResult {
  double rmse = 0.0;  // NaN when no pair falls inside the gate
  int matched = 0;
};

/// Assignment maximizing the number of gated pairs, then minimizing total squared error.
RmseResult compute_rmse(const std::vector<Position2D>& estimated,
                        const std::vector<Position2D>& truth, double gate = kMatchGate);

/// Minimum-cost assignment of rows to columns (rows <= cols), Hungarian method.
std::vector<int> min_cost_assignment(const MatR& cost);

/// ||h_hat - h||^2 / ||h||^2.
double compute_nmse(const VecC& h_hat, const VecC& h_true);

struct MetricsRecord {
  std::string variant;
  double snr_db = 0.0;
  int overlap = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  double rmse_target = 0.0;
  double rmse_scatterer = 0.0;
  double nmse_radar = 0.0;
  double nmse_comm = 0.0;
  double miss_rate = 0.0;
  double false_alarm_rate = 0.0;
  double runtime_per_iteration = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string error;  // non-empty when the cell failed

  void validate() const;
};

/// Metrics of one estimate against the scene that generated the data.
MetricsRecord evaluate(const EstimateResult& est, const Scene& scene, const ModelBuilder& builder,
                       const Observation& noiseless);

/// NMSE in dB.
double to_db(double nmse);

}  // namespace isac
