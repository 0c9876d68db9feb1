#include "isac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#ifndef ISAC_VERSION
#define ISAC_VERSION "0.0.0"
#endif

namespace isac {

using json = nlohmann::json;
namespace fs = std::filesystem;

HyperParams HyperDefaults::make(int Q, int UV) const {
  HyperParams h = HyperParams::defaults(Q, UV);
  h.a = a;
  h.b = b;
  h.abar = abar;
  h.bbar = bbar;
  h.c = c;
  h.d = d;
  h.lambda_r.setConstant(lambda_grid);
  h.lambda_c.setConstant(lambda_grid);
  h.lambda0_r = lambda0;
  h.lambda0_c = lambda0;
  h.lambda_mb.setConstant(lambda_mb);
  h.lambda_iid_r = lambda_grid;
  h.lambda_iid_c = lambda_grid;
  return h;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.preset = "desk";
  c.array.num_antennas = 16;
  c.ofdm.num_subcarriers = 256;
  c.pilot_interval = 16;
  c.scene.resolution = 10.0;
  c.scene.num_targets = 4;
  c.scene.num_scatterers = 5;
  c.scene.num_multibounce = 1;
  c.angle_delay.U = 16;
  c.angle_delay.V = 8;
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.preset = "paper";
  c.array.num_antennas = 64;
  c.ofdm.num_subcarriers = 1024;
  c.pilot_interval = 32;
  c.scene.resolution = 5.0;
  c.scene.clusters = {{5, 3}, {3, 3}};
  c.scene.num_targets = 6;
  c.scene.num_scatterers = 8;
  c.scene.num_multibounce = 2;
  c.angle_delay.U = 32;
  c.angle_delay.V = 16;
  c.estimator.dense_cap = 2000;
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset: " + name);
}

void ExperimentConfig::finalize() {
  if (pilot_interval < 1) throw ConfigError("pilot interval must be >= 1");
  ofdm.radar_pilots.clear();
  ofdm.comm_pilots.clear();
  // radar and uplink pilots interleave at half the interval
  for (int n = 0; n < ofdm.num_subcarriers; n += pilot_interval) {
    ofdm.radar_pilots.push_back(n);
    const int u = n + pilot_interval / 2;
    if (u < ofdm.num_subcarriers) ofdm.comm_pilots.push_back(u);
  }
  angle_delay.tau_min = 0.0;
  angle_delay.tau_max = scene.mb_delay_max_bw / ofdm.bandwidth();
}

void ExperimentConfig::validate() const {
  array.validate();
  ofdm.validate();
  scene.validate();
  estimator.validate();
  if (angle_delay.U < 1 || angle_delay.V < 1) throw ConfigError("angle/delay grid must be nonempty");
  if (sweep.variants.empty()) throw ConfigError("sweep needs at least one variant");
  for (const auto& v : sweep.variants)
    if (v != "omp") parse_variant(v);
  if (sweep.snr_db.empty() || sweep.overlaps.empty()) throw ConfigError("sweep axes must be nonempty");
  for (int o : sweep.overlaps)
    if (o < 0 || o > std::min(scene.num_targets, scene.num_scatterers))
      throw ConfigError("overlap outside [0, min(K, L)]");
  if (sweep.trials < 1) throw ConfigError("trials must be >= 1");
  const int D = 1 + scene.grid_rows() * scene.grid_cols() + angle_delay.U * angle_delay.V;
  for (const auto& v : sweep.variants)
    if (v == "non_relaxed" && D > estimator.dense_cap)
      throw ConfigError("non_relaxed variant exceeds the dense cap");
}

int ExperimentConfig::num_cells() const {
  return static_cast<int>(sweep.variants.size() * sweep.snr_db.size() * sweep.overlaps.size()) *
         sweep.trials;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json region_json(const Region& r) { return {r.x_min, r.x_max, r.y_min, r.y_max}; }

Region region_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw ConfigError("region: expected [x_min, x_max, y_min, y_max]");
  return {v[0], v[1], v[2], v[3]};
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["array"] = {{"num_antennas", c.array.num_antennas}};
  j["ofdm"] = {{"num_subcarriers", c.ofdm.num_subcarriers},
               {"subcarrier_spacing", c.ofdm.subcarrier_spacing},
               {"carrier_freq", c.ofdm.carrier_freq},
               {"pilot_interval", c.pilot_interval},
               {"speed_of_light", c.ofdm.speed_of_light}};
  const SceneConfig& s = c.scene;
  json clusters = json::array();
  for (const auto& cl : s.clusters) clusters.push_back({cl.cols, cl.rows});
  j["scene"] = {{"region", region_json(s.region)},
                {"resolution", s.resolution},
                {"bs", {s.bs.x, s.bs.y}},
                {"user_mean", {s.user_mean.x, s.user_mean.y}},
                {"sigma_p2", s.sigma_p2},
                {"num_targets", s.num_targets},
                {"num_scatterers", s.num_scatterers},
                {"num_multibounce", s.num_multibounce},
                {"echo_prob", s.echo_prob},
                {"off_grid", s.off_grid},
                {"jitter_frac", s.jitter_frac},
                {"clusters", clusters},
                {"clearance", s.clearance},
                {"mb_gain_scale", s.mb_gain_scale},
                {"mb_delay_max_bw", s.mb_delay_max_bw}};
  j["angle_delay"] = {{"U", c.angle_delay.U}, {"V", c.angle_delay.V}};
  const HyperDefaults& h = c.hyper;
  j["hyper"] = {{"a", h.a},           {"b", h.b},
                {"abar", h.abar},     {"bbar", h.bbar},
                {"c", h.c},           {"d", h.d},
                {"lambda_grid", h.lambda_grid}, {"lambda0", h.lambda0},
                {"lambda_mb", h.lambda_mb}};
  const EstimatorConfig& e = c.estimator;
  j["estimator"] = {{"inner_iterations", e.inner_iterations},
                    {"outer_iterations", e.outer_iterations},
                    {"epsilon", e.epsilon},
                    {"mrf_rounds", e.mrf_rounds},
                    {"alpha0", e.alpha0},
                    {"beta0", e.beta0},
                    {"user_halfwidth", e.user_halfwidth},
                    {"tau_search_points", e.tau_search_points},
                    {"zeta_steps", e.zeta.steps},
                    {"zeta_radius", e.zeta.radius},
                    {"armijo_c1", e.step.c1},
                    {"armijo_shrink", e.step.shrink},
                    {"armijo_max_backtracks", e.step.max_backtracks},
                    {"learn_theta", e.learn_theta},
                    {"learn_zeta", e.learn_zeta},
                    {"learn_lambda", e.learn_lambda},
                    {"dense_cap", e.dense_cap}};
  j["sweep"] = {{"variants", c.sweep.variants}, {"snr_db", c.sweep.snr_db},
                {"overlaps", c.sweep.overlaps}, {"trials", c.sweep.trials},
                {"seed", c.sweep.seed},         {"out_dir", c.sweep.out_dir}};
  return j;
}

void apply_json(ExperimentConfig& c, const json& j) {
  check_keys(j, {"preset", "array", "ofdm", "scene", "angle_delay", "hyper", "estimator", "sweep"},
             "config");
  if (j.contains("array")) {
    check_keys(j["array"], {"num_antennas"}, "array");
    take(j["array"], "num_antennas", c.array.num_antennas);
  }
  if (j.contains("ofdm")) {
    const json& o = j["ofdm"];
    check_keys(o, {"num_subcarriers", "subcarrier_spacing", "carrier_freq", "pilot_interval",
                   "speed_of_light"},
               "ofdm");
    take(o, "num_subcarriers", c.ofdm.num_subcarriers);
    take(o, "subcarrier_spacing", c.ofdm.subcarrier_spacing);
    take(o, "carrier_freq", c.ofdm.carrier_freq);
    take(o, "pilot_interval", c.pilot_interval);
    take(o, "speed_of_light", c.ofdm.speed_of_light);
  }
  if (j.contains("scene")) {
    const json& s = j["scene"];
    check_keys(s, {"region", "resolution", "bs", "user_mean", "sigma_p2", "num_targets",
                   "num_scatterers", "num_multibounce", "echo_prob", "off_grid", "jitter_frac",
                   "clusters", "clearance", "mb_gain_scale", "mb_delay_max_bw"},
               "scene");
    SceneConfig& sc = c.scene;
    if (s.contains("region")) sc.region = region_from(s["region"]);
    auto pos = [&](const char* k, Position2D& p) {
      if (!s.contains(k)) return;
      const auto v = s[k].get<std::vector<double>>();
      if (v.size() != 2) throw ConfigError(std::string("scene.") + k + ": expected [x, y]");
      p = {v[0], v[1]};
    };
    pos("bs", sc.bs);
    pos("user_mean", sc.user_mean);
    take(s, "resolution", sc.resolution);
    take(s, "sigma_p2", sc.sigma_p2);
    take(s, "num_targets", sc.num_targets);
    take(s, "num_scatterers", sc.num_scatterers);
    take(s, "num_multibounce", sc.num_multibounce);
    take(s, "echo_prob", sc.echo_prob);
    take(s, "off_grid", sc.off_grid);
    take(s, "jitter_frac", sc.jitter_frac);
    take(s, "clearance", sc.clearance);
    take(s, "mb_gain_scale", sc.mb_gain_scale);
    take(s, "mb_delay_max_bw", sc.mb_delay_max_bw);
    if (s.contains("clusters")) {
      sc.clusters.clear();
      for (const auto& cl : s["clusters"]) {
        const auto v = cl.get<std::vector<int>>();
        if (v.size() != 2) throw ConfigError("scene.clusters: expected [cols, rows] pairs");
        sc.clusters.push_back({v[0], v[1]});
      }
    }
  }
  if (j.contains("angle_delay")) {
    check_keys(j["angle_delay"], {"U", "V"}, "angle_delay");
    take(j["angle_delay"], "U", c.angle_delay.U);
    take(j["angle_delay"], "V", c.angle_delay.V);
  }
  if (j.contains("hyper")) {
    const json& h = j["hyper"];
    check_keys(h, {"a", "b", "abar", "bbar", "c", "d", "lambda_grid", "lambda0", "lambda_mb"},
               "hyper");
    take(h, "a", c.hyper.a);
    take(h, "b", c.hyper.b);
    take(h, "abar", c.hyper.abar);
    take(h, "bbar", c.hyper.bbar);
    take(h, "c", c.hyper.c);
    take(h, "d", c.hyper.d);
    take(h, "lambda_grid", c.hyper.lambda_grid);
    take(h, "lambda0", c.hyper.lambda0);
    take(h, "lambda_mb", c.hyper.lambda_mb);
  }
  if (j.contains("estimator")) {
    const json& e = j["estimator"];
    check_keys(e, {"inner_iterations", "outer_iterations", "epsilon", "mrf_rounds", "alpha0",
                   "beta0", "user_halfwidth", "tau_search_points", "zeta_steps", "zeta_radius",
                   "armijo_c1", "armijo_shrink", "armijo_max_backtracks", "learn_theta",
                   "learn_zeta", "learn_lambda", "dense_cap"},
               "estimator");
    EstimatorConfig& ec = c.estimator;
    take(e, "inner_iterations", ec.inner_iterations);
    take(e, "outer_iterations", ec.outer_iterations);
    take(e, "epsilon", ec.epsilon);
    take(e, "mrf_rounds", ec.mrf_rounds);
    take(e, "alpha0", ec.alpha0);
    take(e, "beta0", ec.beta0);
    take(e, "user_halfwidth", ec.user_halfwidth);
    take(e, "tau_search_points", ec.tau_search_points);
    take(e, "zeta_steps", ec.zeta.steps);
    take(e, "zeta_radius", ec.zeta.radius);
    take(e, "armijo_c1", ec.step.c1);
    take(e, "armijo_shrink", ec.step.shrink);
    take(e, "armijo_max_backtracks", ec.step.max_backtracks);
    take(e, "learn_theta", ec.learn_theta);
    take(e, "learn_zeta", ec.learn_zeta);
    take(e, "learn_lambda", ec.learn_lambda);
    take(e, "dense_cap", ec.dense_cap);
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_keys(s, {"variants", "snr_db", "overlaps", "trials", "seed", "out_dir"}, "sweep");
    take(s, "variants", c.sweep.variants);
    take(s, "snr_db", c.sweep.snr_db);
    take(s, "overlaps", c.sweep.overlaps);
    take(s, "trials", c.sweep.trials);
    take(s, "seed", c.sweep.seed);
    take(s, "out_dir", c.sweep.out_dir);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected an object");
  ExperimentConfig c = ExperimentConfig::from_preset(j.value("preset", std::string("desk")));
  try {
    apply_json(c, j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.finalize();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_file(path)); }

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j["sweep"].erase("out_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* code_version() { return ISAC_VERSION; }

std::uint64_t trial_seed(std::uint64_t base, int trial) {
  return derive_seed(base, static_cast<std::uint64_t>(trial));
}

TrialData prepare_trial(const ExperimentConfig& cfg, double snr_db, int overlap,
                        std::uint64_t seed) {
  TrialData t;
  SceneConfig sc = cfg.scene;
  sc.overlap = overlap;
  sc.validate();
  t.scene = synthesize_scene(sc, cfg.ofdm, derive_seed(seed, 1));
  set_noise_for_snr(t.scene, cfg.array, snr_db);
  t.pilots = generate_pilots(cfg.array, cfg.ofdm, derive_seed(seed, 2));
  auto grids = build_grids({sc.region, sc.resolution}, cfg.angle_delay);
  t.grid = grids.first;
  t.ad = grids.second;
  t.builder = std::make_shared<ModelBuilder>(cfg.array, cfg.ofdm, t.pilots, sc.bs, t.grid, t.ad);
  t.clean = noiseless_observation(t.scene, cfg.array, cfg.ofdm, t.pilots);
  t.obs = observe(t.scene, cfg.array, cfg.ofdm, t.pilots, derive_seed(seed, 3));

  const Layout lay = t.builder->layout();
  VariantInputs& in = t.inputs;
  in.builder = t.builder.get();
  in.obs = t.obs;
  in.hyper = cfg.hyper.make(lay.Q, lay.UV);
  in.prior = {sc.user_mean, sc.sigma_p2};
  in.cfg = cfg.estimator;
  in.cfg.seed = seed;
  in.genie = GenieInfo{t.scene.user, t.scene.tau_o};
  auto energy = [](double gamma, Index rows) {
    return std::isfinite(gamma) ? static_cast<double>(rows) / gamma : 0.0;
  };
  in.noise_energy_r = energy(t.scene.gamma_r, t.obs.y_r.size());
  in.noise_energy_c = energy(t.scene.gamma_c, t.obs.y_c.size());
  return t;
}

TrialOutcome run_trial(const ExperimentConfig& cfg, const std::string& variant, double snr_db,
                       int overlap, std::uint64_t seed) {
  const TrialData t = prepare_trial(cfg, snr_db, overlap, seed);
  TrialOutcome out;
  out.estimate = run_variant(variant, t.inputs);
  out.metrics = evaluate(out.estimate, t.scene, *t.builder, t.clean);
  out.metrics.variant = variant;
  out.metrics.snr_db = snr_db;
  out.metrics.overlap = overlap;
  out.metrics.seed = seed;
  out.metrics.validate();
  return out;
}

namespace {

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string metrics_to_json(const MetricsRecord& m) {
  json j = {{"variant", m.variant},
            {"snr_db", m.snr_db},
            {"overlap", m.overlap},
            {"trial", m.trial},
            {"seed", m.seed},
            {"rmse_target", num_or_null(m.rmse_target)},
            {"rmse_scatterer", num_or_null(m.rmse_scatterer)},
            {"nmse_radar_db", num_or_null(to_db(m.nmse_radar))},
            {"nmse_comm_db", num_or_null(to_db(m.nmse_comm))},
            {"miss_rate", m.miss_rate},
            {"false_alarm_rate", m.false_alarm_rate},
            {"runtime_per_iteration", m.runtime_per_iteration},
            {"iterations", m.iterations},
            {"converged", m.converged}};
  if (!m.error.empty()) j["error"] = m.error;
  return j.dump(2);
}

std::string SweepCell::key() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s|%.17g|%d|%d", variant.c_str(), snr_db, overlap, trial);
  return buf;
}

std::vector<SweepCell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  for (double snr : cfg.sweep.snr_db)
    for (int ov : cfg.sweep.overlaps)
      for (int tr = 0; tr < cfg.sweep.trials; ++tr)
        for (const auto& v : cfg.sweep.variants)
          cells.push_back({v, snr, ov, tr, trial_seed(cfg.sweep.seed, tr)});
  return cells;
}

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("ISAC_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("ISAC_WORKERS must be a positive integer, got '") + env + "'");
  }
  return hw;
}

// --- csv ---

namespace {

const std::vector<std::string> kColumns = {
    "variant",  "snr_db",           "overlap",    "trial",      "seed",
    "rmse_target", "rmse_scatterer", "nmse_radar", "nmse_comm", "nmse_radar_db",
    "nmse_comm_db", "miss_rate",    "false_alarm_rate", "runtime_per_iteration",
    "iterations", "converged", "error"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw ConfigError("csv: bad number '" + s + "'");
  return v;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double db_or_nan(double v) { return v > 0 ? to_db(v) : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::string csv_header() {
  std::string h;
  for (std::size_t i = 0; i < kColumns.size(); ++i) h += (i ? "," : "") + kColumns[i];
  return h;
}

std::string csv_row(const MetricsRecord& m) {
  std::ostringstream o;
  o << sanitize(m.variant) << ',' << fmt(m.snr_db) << ',' << m.overlap << ',' << m.trial << ','
    << m.seed << ',' << fmt(m.rmse_target) << ',' << fmt(m.rmse_scatterer) << ','
    << fmt(m.nmse_radar) << ',' << fmt(m.nmse_comm) << ',' << fmt(db_or_nan(m.nmse_radar)) << ','
    << fmt(db_or_nan(m.nmse_comm)) << ',' << fmt(m.miss_rate) << ',' << fmt(m.false_alarm_rate)
    << ',' << fmt(m.runtime_per_iteration) << ',' << m.iterations << ','
    << (m.converged ? 1 : 0) << ',' << sanitize(m.error);
  return o.str();
}

MetricsRecord parse_csv_row(const std::string& line) {
  const auto f = split(line);
  if (f.size() != kColumns.size()) throw ConfigError("csv: wrong field count");
  MetricsRecord m;
  try {
    m.variant = f[0];
    m.snr_db = parse_double(f[1]);
    m.overlap = std::stoi(f[2]);
    m.trial = std::stoi(f[3]);
    m.seed = std::stoull(f[4]);
    m.rmse_target = parse_double(f[5]);
    m.rmse_scatterer = parse_double(f[6]);
    m.nmse_radar = parse_double(f[7]);
    m.nmse_comm = parse_double(f[8]);
    m.miss_rate = parse_double(f[11]);
    m.false_alarm_rate = parse_double(f[12]);
    m.runtime_per_iteration = parse_double(f[13]);
    m.iterations = std::stoi(f[14]);
    m.converged = f[15] == "1";
    m.error = f[16];
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("csv: ") + e.what());
  }
  return m;
}

std::vector<MetricsRecord> load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != std::string("# ") + kCsvSchema)
    throw ConfigError("csv: missing or unsupported schema line in " + path);
  if (!std::getline(f, line) || line != csv_header()) throw ConfigError("csv: unexpected header");
  std::vector<MetricsRecord> rows;
  while (std::getline(f, line))
    if (!line.empty()) rows.push_back(parse_csv_row(line));
  return rows;
}

// --- sweep ---

namespace {

struct Manifest {
  std::string hash;
  std::map<std::string, std::uint64_t> done;  // cell key -> seed
};

void write_manifest(const fs::path& path, const ExperimentConfig& cfg, const Manifest& man,
                    int total) {
  json j;
  j["schema"] = "isac-manifest/1";
  j["config_hash"] = man.hash;
  j["code_version"] = code_version();
  j["csv_schema"] = kCsvSchema;
  j["total_cells"] = total;
  j["config"] = to_json(cfg);
  json cells = json::array();
  for (const auto& [k, s] : man.done) cells.push_back({{"cell", k}, {"seed", s}});
  j["completed"] = cells;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << j.dump(1) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace

SweepSummary sweep(const ExperimentConfig& cfg, int workers,
                   const std::function<void(const MetricsRecord&)>& on_row) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(cfg.sweep.out_dir);
  fs::create_directories(dir);
  const fs::path csv_path = dir / "results.csv";
  const fs::path man_path = dir / "manifest.json";

  Manifest man;
  man.hash = config_hash(cfg);
  if (fs::exists(man_path)) {
    json j;
    try {
      j = json::parse(read_file(man_path.string()));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("manifest: ") + e.what());
    }
    if (j.value("config_hash", std::string()) != man.hash)
      throw ConfigError("output directory holds a sweep of a different config");
    for (const auto& c : j.at("completed"))
      man.done[c.at("cell").get<std::string>()] = c.at("seed").get<std::uint64_t>();
  }
  // keep only rows the manifest vouches for
  std::vector<MetricsRecord> kept;
  if (fs::exists(csv_path) && !man.done.empty()) {
    for (auto& r : load_csv(csv_path.string())) {
      SweepCell c{r.variant, r.snr_db, r.overlap, r.trial, r.seed};
      if (man.done.count(c.key())) kept.push_back(std::move(r));
    }
  }
  std::set<std::string> present;
  for (const auto& r : kept) present.insert(SweepCell{r.variant, r.snr_db, r.overlap, r.trial, r.seed}.key());
  for (auto it = man.done.begin(); it != man.done.end();)
    it = present.count(it->first) ? std::next(it) : man.done.erase(it);

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "# " << kCsvSchema << '\n' << csv_header() << '\n';
  for (const auto& r : kept) csv << csv_row(r) << '\n';
  csv.flush();

  const std::vector<SweepCell> cells = enumerate_cells(cfg);
  std::vector<SweepCell> todo;
  for (const auto& c : cells)
    if (!man.done.count(c.key())) todo.push_back(c);

  SweepSummary sum;
  sum.total = static_cast<int>(cells.size());
  sum.skipped = sum.total - static_cast<int>(todo.size());
  sum.records = kept;
  write_manifest(man_path, cfg, man, sum.total);

  std::mutex sink;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const SweepCell& c = todo[i];
      MetricsRecord m;
      try {
        m = run_trial(cfg, c.variant, c.snr_db, c.overlap, c.seed).metrics;
      } catch (const std::exception& e) {
        m = MetricsRecord{};
        m.variant = c.variant;
        m.snr_db = c.snr_db;
        m.overlap = c.overlap;
        m.seed = c.seed;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        m.rmse_target = m.rmse_scatterer = m.nmse_radar = m.nmse_comm = nan;
        m.miss_rate = m.false_alarm_rate = m.runtime_per_iteration = nan;
        m.error = e.what();
      }
      m.trial = c.trial;
      std::lock_guard lock(sink);
      csv << csv_row(m) << '\n';
      csv.flush();
      man.done[c.key()] = c.seed;
      write_manifest(man_path, cfg, man, sum.total);
      ++sum.ran;
      if (!m.error.empty()) ++sum.failed;
      sum.records.push_back(m);
      if (on_row) on_row(m);
    }
  };
  const int nw = std::max(1, std::min(workers > 0 ? workers : worker_count(),
                                      static_cast<int>(std::max<std::size_t>(todo.size(), 1))));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < nw; ++w) pool.emplace_back(work);
    work();
  }
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sum;
}

}  // namespace isac
