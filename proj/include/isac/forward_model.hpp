#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isac/geometry.hpp"

namespace isac {

/// Rectangular cluster footprint measured in grid cells.
struct ClusterShape {
  int cols = 2;
  int rows = 2;
};

struct SceneConfig {
  Region region;
  double resolution = 10.0;
  Position2D bs{-50.0, 0.0};
  Position2D user_mean{50.0, 0.0};
  double sigma_p2 = 1.0;  // user prior: each coordinate has variance sigma_p2 / 2
  int num_targets = 4;
  int num_scatterers = 5;
  int num_multibounce = 1;
  int overlap = 0;
  double echo_prob = 0.5;
  bool off_grid = true;
  double jitter_frac = 0.8;  // uniform offset within +-jitter_frac * resolution / 2
  std::vector<ClusterShape> clusters{{3, 2}, {2, 2}};
  double clearance = 15.0;       // min distance from cluster cells to bs and user mean
  double mb_gain_scale = 0.1;
  double mb_delay_max_bw = 4.0;  // multi-bounce excess delay upper limit, units of 1/B

  int grid_rows() const;
  int grid_cols() const;
  Position2D cell_center(int row, int col) const;
  void validate() const;
};

struct Target {
  Position2D pos;
  cd gain;
};

struct MultibouncePath {
  double aoa = 0.0;    // radians
  double delay = 0.0;  // excess delay, seconds
  cd gain;
};

struct Scene {
  Position2D bs;
  Position2D user;
  std::vector<Target> targets;
  cd user_echo_gain{0.0, 0.0};
  std::vector<Target> scatterers;
  cd los_gain{1.0, 0.0};
  std::vector<MultibouncePath> multibounce;
  double tau_o = 0.0;
  double gamma_r = std::numeric_limits<double>::infinity();
  double gamma_c = std::numeric_limits<double>::infinity();
  int overlap = 0;
};

struct PilotSet {
  MatC downlink;  // M x |N_b|, column i is v_n for the i-th radar pilot
  VecC uplink;    // |N_u|
};

struct Observation {
  VecC y_r;  // M|N_b|, subcarrier-major: entry i*M + m
  VecC y_c;
};

/// Fully deterministic in (cfg, ofdm, seed).
Scene synthesize_scene(const SceneConfig& cfg, const OfdmConfig& ofdm, std::uint64_t seed);

PilotSet generate_pilots(const ArrayConfig& array, const OfdmConfig& ofdm, std::uint64_t seed);

MatC radar_channel(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm, int n);
VecC comm_channel(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm, int n);

Observation noiseless_observation(const Scene& scene, const ArrayConfig& array,
                                  const OfdmConfig& ofdm, const PilotSet& pilots);

/// Adds circular Gaussian noise with the scene's precisions; infinite precision means no noise.
Observation observe(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm,
                    const PilotSet& pilots, std::uint64_t seed);

/// Expected received power per observation entry, averaged over random pilot phases.
struct BlockPower {
  double radar = 0.0;
  double comm = 0.0;
};
BlockPower expected_entry_power(const Scene& scene, const ArrayConfig& array);

/// Sets gamma_r, gamma_c so that each block's per-entry SNR equals snr_db.
void set_noise_for_snr(Scene& scene, const ArrayConfig& array, double snr_db);

/// Subcarrier-major stacking helpers.
MatC unstack(const VecC& y, int num_antennas);
VecC stack(const MatC& per_subcarrier);

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

}  // namespace isac
