#include "isac/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace isac {

using json = nlohmann::json;

namespace {

enum Stream : std::uint64_t {
  kClusters = 1,
  kTargets,
  kTargetGains,
  kScatterers,
  kScatterGains,
  kMultibounce,
  kUser,
  kOffset,
  kEcho,
};

cd complex_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

int cells_along(double extent, double res, const char* axis) {
  const double k = extent / res;
  const double r = std::round(k);
  if (r < 1 || std::abs(k - r) > 1e-9 * std::max(1.0, k))
    throw ConfigError(std::string("region ") + axis + " extent is not a multiple of the resolution");
  return static_cast<int>(r);
}

struct Cell {
  int row;
  int col;
};

}  // namespace

int SceneConfig::grid_rows() const { return cells_along(region.height(), resolution, "y"); }
int SceneConfig::grid_cols() const { return cells_along(region.width(), resolution, "x"); }

Position2D SceneConfig::cell_center(int row, int col) const {
  return {region.x_min + (col + 0.5) * resolution, region.y_min + (row + 0.5) * resolution};
}

void SceneConfig::validate() const {
  region.validate();
  if (!(resolution > 0)) throw ConfigError("resolution must be positive");
  grid_rows();
  grid_cols();
  if (num_targets < 0 || num_scatterers < 0 || num_multibounce < 0)
    throw ConfigError("path counts must be nonnegative");
  if (overlap < 0 || overlap > std::min(num_targets, num_scatterers))
    throw ConfigError("overlap count exceeds min(K, L)");
  if (echo_prob < 0 || echo_prob > 1) throw ConfigError("echo probability outside [0,1]");
  if (jitter_frac < 0 || jitter_frac >= 1) throw ConfigError("jitter fraction outside [0,1)");
  if (clusters.empty()) throw ConfigError("at least one cluster is required");
  for (const auto& c : clusters)
    if (c.rows < 1 || c.cols < 1) throw ConfigError("cluster shape must be at least 1x1");
  if (!(sigma_p2 >= 0)) throw ConfigError("sigma_p2 must be nonnegative");
}

Scene synthesize_scene(const SceneConfig& cfg, const OfdmConfig& ofdm, std::uint64_t seed) {
  cfg.validate();
  const int H = cfg.grid_rows();
  const int W = cfg.grid_cols();
  const double B = ofdm.bandwidth();

  // Place clusters one at a time, uniformly among admissible footprints.
  std::vector<std::vector<bool>> used(H, std::vector<bool>(W, false));
  std::vector<Cell> cells;
  std::mt19937_64 crng(derive_seed(seed, kClusters));
  for (const auto& shape : cfg.clusters) {
    std::vector<Cell> anchors;
    for (int c0 = 0; c0 + shape.cols <= W; ++c0)
      for (int r0 = 0; r0 + shape.rows <= H; ++r0) {
        bool ok = true;
        for (int c = c0; ok && c < c0 + shape.cols; ++c)
          for (int r = r0; ok && r < r0 + shape.rows; ++r) {
            const Position2D p = cfg.cell_center(r, c);
            if (used[r][c] || distance(p, cfg.bs) < cfg.clearance ||
                distance(p, cfg.user_mean) < cfg.clearance)
              ok = false;
          }
        if (ok) anchors.push_back({r0, c0});
      }
    if (anchors.empty()) throw ConfigError("no room to place a cluster");
    std::uniform_int_distribution<std::size_t> pick(0, anchors.size() - 1);
    const Cell a = anchors[pick(crng)];
    for (int c = a.col; c < a.col + shape.cols; ++c)
      for (int r = a.row; r < a.row + shape.rows; ++r) {
        used[r][c] = true;
        cells.push_back({r, c});
      }
  }
  const int K = cfg.num_targets;
  const int L = cfg.num_scatterers;
  if (static_cast<int>(cells.size()) < K + L - cfg.overlap)
    throw ConfigError("clusters hold fewer cells than distinct target/scatterer positions");

  const double half = cfg.off_grid ? cfg.jitter_frac * cfg.resolution / 2 : 0.0;
  auto jittered = [&](Cell c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-half, half);
    Position2D p = cfg.cell_center(c.row, c.col);
    if (half > 0) {
      p.x += u(rng);
      p.y += u(rng);
    }
    return p;
  };

  Scene s;
  s.bs = cfg.bs;
  s.overlap = cfg.overlap;

  std::mt19937_64 trng(derive_seed(seed, kTargets));
  std::shuffle(cells.begin(), cells.end(), trng);
  std::mt19937_64 tg(derive_seed(seed, kTargetGains));
  for (int k = 0; k < K; ++k) s.targets.push_back({jittered(cells[k], trng), complex_normal(tg)});

  std::mt19937_64 srng(derive_seed(seed, kScatterers));
  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), srng);
  std::vector<Cell> free_cells(cells.begin() + K, cells.end());
  std::shuffle(free_cells.begin(), free_cells.end(), srng);
  std::mt19937_64 sg(derive_seed(seed, kScatterGains));
  for (int l = 0; l < L; ++l) {
    Position2D p = l < cfg.overlap ? s.targets[order[l]].pos
                                   : jittered(free_cells[l - cfg.overlap], srng);
    s.scatterers.push_back({p, complex_normal(sg)});
  }

  std::mt19937_64 mrng(derive_seed(seed, kMultibounce));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> dly(0.0, cfg.mb_delay_max_bw / B);
  for (int j = 0; j < cfg.num_multibounce; ++j) {
    MultibouncePath path;
    path.aoa = std::asin(unit(mrng));
    path.delay = dly(mrng);
    path.gain = cfg.mb_gain_scale * complex_normal(mrng);
    s.multibounce.push_back(path);
  }

  std::mt19937_64 urng(derive_seed(seed, kUser));
  std::normal_distribution<double> pn(0.0, std::sqrt(cfg.sigma_p2 / 2));
  s.user = {cfg.user_mean.x + pn(urng), cfg.user_mean.y + pn(urng)};
  s.los_gain = complex_normal(urng);

  std::mt19937_64 orng(derive_seed(seed, kOffset));
  s.tau_o = std::uniform_real_distribution<double>(-2.0 / B, 2.0 / B)(orng);

  std::mt19937_64 erng(derive_seed(seed, kEcho));
  const bool echo = std::uniform_real_distribution<double>(0.0, 1.0)(erng) < cfg.echo_prob;
  const cd eg = complex_normal(erng);
  s.user_echo_gain = echo ? eg : cd(0.0, 0.0);
  return s;
}

PilotSet generate_pilots(const ArrayConfig& array, const OfdmConfig& ofdm, std::uint64_t seed) {
  array.validate();
  ofdm.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(0.0, 2 * kPi);
  const int M = array.num_antennas;
  const double scale = 1.0 / std::sqrt(static_cast<double>(M));
  PilotSet p;
  p.downlink.resize(M, static_cast<Index>(ofdm.radar_pilots.size()));
  for (Index i = 0; i < p.downlink.cols(); ++i)
    for (int m = 0; m < M; ++m) p.downlink(m, i) = std::polar(scale, ph(rng));
  p.uplink.resize(static_cast<Index>(ofdm.comm_pilots.size()));
  for (Index i = 0; i < p.uplink.size(); ++i) p.uplink[i] = std::polar(1.0, ph(rng));
  return p;
}

MatC radar_channel(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm, int n) {
  const int M = array.num_antennas;
  MatC H = MatC::Zero(M, M);
  auto add = [&](Position2D p, cd x) {
    if (x == cd(0.0, 0.0)) return;
    const VecC a = steering_vector(array, aoa(scene.bs, p));
    const double tau = radar_round_trip_delay(scene.bs, p, ofdm.speed_of_light);
    H += x * std::polar(1.0, -2 * kPi * n * ofdm.subcarrier_spacing * tau) * a * a.transpose();
  };
  add(scene.user, scene.user_echo_gain);
  for (const auto& t : scene.targets) add(t.pos, t.gain);
  return H;
}

VecC comm_channel(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm, int n) {
  const double w = -2 * kPi * n * ofdm.subcarrier_spacing;
  VecC h = scene.los_gain * std::polar(1.0, w * scene.tau_o) *
           steering_vector(array, aoa(scene.bs, scene.user));
  for (const auto& sc : scene.scatterers) {
    const double tau =
        single_bounce_relative_delay(scene.bs, sc.pos, scene.user, ofdm.speed_of_light);
    h += sc.gain * std::polar(1.0, w * (tau + scene.tau_o)) *
         steering_vector(array, aoa(scene.bs, sc.pos));
  }
  for (const auto& mb : scene.multibounce)
    h += mb.gain * std::polar(1.0, w * (mb.delay + scene.tau_o)) * steering_vector(array, mb.aoa);
  return h;
}

Observation noiseless_observation(const Scene& scene, const ArrayConfig& array,
                                  const OfdmConfig& ofdm, const PilotSet& pilots) {
  const int M = array.num_antennas;
  const auto nb = static_cast<Index>(ofdm.radar_pilots.size());
  const auto nu = static_cast<Index>(ofdm.comm_pilots.size());
  if (pilots.downlink.rows() != M || pilots.downlink.cols() != nb || pilots.uplink.size() != nu)
    throw ConfigError("pilot set does not match array/OFDM configuration");
  Observation o;
  o.y_r.resize(M * nb);
  o.y_c.resize(M * nu);
  for (Index i = 0; i < nb; ++i)
    o.y_r.segment(i * M, M) =
        radar_channel(scene, array, ofdm, ofdm.radar_pilots[i]) * pilots.downlink.col(i);
  for (Index i = 0; i < nu; ++i)
    o.y_c.segment(i * M, M) =
        comm_channel(scene, array, ofdm, ofdm.comm_pilots[i]) * pilots.uplink[i];
  return o;
}

Observation observe(const Scene& scene, const ArrayConfig& array, const OfdmConfig& ofdm,
                    const PilotSet& pilots, std::uint64_t seed) {
  Observation o = noiseless_observation(scene, array, ofdm, pilots);
  std::mt19937_64 rng(seed);
  auto add_noise = [&](VecC& y, double gamma) {
    if (std::isinf(gamma)) return;
    if (!(gamma > 0)) throw NumericError("noise precision must be positive");
    std::normal_distribution<double> n(0.0, std::sqrt(0.5 / gamma));
    for (Index i = 0; i < y.size(); ++i) {
      const double re = n(rng);
      const double im = n(rng);
      y[i] += cd(re, im);
    }
  };
  add_noise(o.y_r, scene.gamma_r);
  add_noise(o.y_c, scene.gamma_c);
  return o;
}

BlockPower expected_entry_power(const Scene& scene, const ArrayConfig& array) {
  const double M = array.num_antennas;
  double r = std::norm(scene.user_echo_gain);
  for (const auto& t : scene.targets) r += std::norm(t.gain);
  double c = std::norm(scene.los_gain);
  for (const auto& s : scene.scatterers) c += std::norm(s.gain);
  for (const auto& m : scene.multibounce) c += std::norm(m.gain);
  return {r / (M * M), c / M};
}

void set_noise_for_snr(Scene& scene, const ArrayConfig& array, double snr_db) {
  const BlockPower p = expected_entry_power(scene, array);
  const double M = array.num_antennas;
  const double lin = std::pow(10.0, snr_db / 10.0);
  // empty blocks fall back to the power of one unit-gain path
  scene.gamma_r = lin / (p.radar > 0 ? p.radar : 1.0 / (M * M));
  scene.gamma_c = lin / (p.comm > 0 ? p.comm : 1.0 / M);
}

MatC unstack(const VecC& y, int num_antennas) {
  if (num_antennas < 1 || y.size() % num_antennas != 0)
    throw ConfigError("vector length is not a multiple of the antenna count");
  return Eigen::Map<const MatC>(y.data(), num_antennas, y.size() / num_antennas);
}

VecC stack(const MatC& per_subcarrier) {
  return Eigen::Map<const VecC>(per_subcarrier.data(), per_subcarrier.size());
}

namespace {

json cjson(cd z) { return json::array({z.real(), z.imag()}); }
cd cparse(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json pjson(Position2D p) { return json::array({p.x, p.y}); }
Position2D pparse(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json precision_json(double g) { return std::isinf(g) ? json(nullptr) : json(g); }
double precision_parse(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

std::string scene_to_json(const Scene& s) {
  json j;
  j["schema"] = "isac-scene/1";
  j["bs"] = pjson(s.bs);
  j["user"] = pjson(s.user);
  j["user_echo_gain"] = cjson(s.user_echo_gain);
  j["los_gain"] = cjson(s.los_gain);
  j["tau_o"] = s.tau_o;
  j["gamma_r"] = precision_json(s.gamma_r);
  j["gamma_c"] = precision_json(s.gamma_c);
  j["overlap"] = s.overlap;
  j["targets"] = json::array();
  for (const auto& t : s.targets) j["targets"].push_back({{"pos", pjson(t.pos)}, {"gain", cjson(t.gain)}});
  j["scatterers"] = json::array();
  for (const auto& t : s.scatterers)
    j["scatterers"].push_back({{"pos", pjson(t.pos)}, {"gain", cjson(t.gain)}});
  j["multibounce"] = json::array();
  for (const auto& m : s.multibounce)
    j["multibounce"].push_back({{"aoa", m.aoa}, {"delay", m.delay}, {"gain", cjson(m.gain)}});
  return j.dump(2);
}

Scene scene_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene file: ") + e.what());
  }
  try {
    Scene s;
    s.bs = pparse(j.at("bs"));
    s.user = pparse(j.at("user"));
    s.user_echo_gain = cparse(j.at("user_echo_gain"));
    s.los_gain = cparse(j.at("los_gain"));
    s.tau_o = j.at("tau_o").get<double>();
    s.gamma_r = precision_parse(j.at("gamma_r"));
    s.gamma_c = precision_parse(j.at("gamma_c"));
    s.overlap = j.value("overlap", 0);
    for (const auto& t : j.at("targets")) s.targets.push_back({pparse(t.at("pos")), cparse(t.at("gain"))});
    for (const auto& t : j.at("scatterers"))
      s.scatterers.push_back({pparse(t.at("pos")), cparse(t.at("gain"))});
    for (const auto& m : j.at("multibounce"))
      s.multibounce.push_back({m.at("aoa").get<double>(), m.at("delay").get<double>(), cparse(m.at("gain"))});
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene file: ") + e.what());
  }
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << scene_to_json(scene) << '\n';
}

Scene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return scene_from_json(ss.str());
}

}  // namespace isac
