#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isac/harness.hpp"
#include "isac/verify.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::uint64_t seed = 1;
  bool seed_set = false;
};

isac::ExperimentConfig load(const Common& c) {
  if (!c.config.empty() && !c.preset.empty())
    throw isac::ConfigError("give either --config or --preset, not both");
  isac::ExperimentConfig cfg = c.config.empty()
                                   ? isac::ExperimentConfig::from_preset(c.preset.empty() ? "desk" : c.preset)
                                   : isac::load_config(c.config);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "built-in preset")->check(CLI::IsMember({"paper", "desk"}));
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output path");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint sensing and channel estimation experiments"};
  app.require_subcommand(1);

  Common sc, rc, wc, vc;
  double snr = 10.0;
  int overlap = 0;
  std::string variant = "mrf";
  std::vector<std::string> sweep_variants;
  int trials = -1;
  int v_trials = 100;
  bool strict = false;
  bool resume = false;
  std::vector<int> criteria;

  auto* synth = app.add_subcommand("synth", "write the scene of one trial as JSON");
  add_common(synth, sc);
  synth->add_option("--snr", snr, "SNR in dB (sets the noise precisions)");
  synth->add_option("--overlap", overlap, "targets sharing a cell with a scatterer");

  auto* run = app.add_subcommand("run", "estimate one trial and print its metrics as JSON");
  add_common(run, rc);
  run->add_option("--variant", variant, "mrf, iid, genie, non_relaxed or omp");
  run->add_option("--snr", snr, "SNR in dB");
  run->add_option("--overlap", overlap, "targets sharing a cell with a scatterer");

  auto* sw = app.add_subcommand("sweep", "run every (variant, SNR, overlap, trial) cell");
  add_common(sw, wc);
  sw->add_option("--variant", sweep_variants, "restrict to these variants")->delimiter(',');
  sw->add_option("--trials", trials, "trials per point");

  auto* ver = app.add_subcommand("verify", "oracle and property checks");
  add_common(ver, vc);
  ver->add_option("--trials", v_trials, "trials per point of the ordering checks");
  ver->add_option("criteria", criteria, "criterion numbers (default: all)");
  ver->add_flag("--strict", strict, "exit with status 1 when a criterion fails");
  ver->add_flag("--resume", resume, "reuse finished sweep cells");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const isac::ExperimentConfig cfg = load(sc);
      const isac::TrialData t = isac::prepare_trial(cfg, snr, overlap, sc.seed);
      const std::string text = isac::scene_to_json(t.scene);
      if (sc.out.empty()) {
        std::cout << text << '\n';
      } else {
        isac::save_scene(t.scene, sc.out);
      }
    } else if (*run) {
      const isac::ExperimentConfig cfg = load(rc);
      const isac::TrialOutcome o = isac::run_trial(cfg, variant, snr, overlap, rc.seed);
      const std::string text = isac::metrics_to_json(o.metrics);
      std::cout << text << '\n';
      if (!rc.out.empty()) write_text(rc.out, text);
    } else if (*sw) {
      isac::ExperimentConfig cfg = load(wc);
      if (!sweep_variants.empty()) cfg.sweep.variants = sweep_variants;
      if (trials > 0) cfg.sweep.trials = trials;
      if (sw->count("--seed")) cfg.sweep.seed = wc.seed;
      if (!wc.out.empty()) cfg.sweep.out_dir = wc.out;
      cfg.validate();
      const int total = cfg.num_cells();
      int done = 0;
      const isac::SweepSummary s = isac::sweep(cfg, -1, [&](const isac::MetricsRecord& m) {
        ++done;
        std::fprintf(stderr, "[%d] %s snr=%g overlap=%d trial=%d%s\n", done, m.variant.c_str(),
                     m.snr_db, m.overlap, m.trial, m.error.empty() ? "" : " FAILED");
      });
      std::printf("%d cells: %d run, %d skipped, %d failed, %.1f s -> %s\n", total, s.ran,
                  s.skipped, s.failed, s.seconds, cfg.sweep.out_dir.c_str());
    } else if (*ver) {
      if (!vc.config.empty() || !vc.preset.empty())
        throw isac::ConfigError("verify runs on the built-in desk preset");
      isac::VerifyOptions opt;
      opt.trials = v_trials;
      if (ver->count("--seed")) opt.seed = vc.seed;
      if (!vc.out.empty()) opt.work_dir = vc.out;
      opt.resume = resume;
      opt.log = [](const std::string& s) { std::fprintf(stderr, "  .. %s\n", s.c_str()); };
      if (criteria.empty())
        for (int k = 1; k <= isac::kNumCriteria; ++k) criteria.push_back(k);
      int failed = 0;
      for (int id : criteria) {
        const isac::CriterionReport r = isac::run_criterion(id, opt);
        std::printf("%s\n", isac::summary_line(r).c_str());
        for (const auto& d : r.details) std::printf("    %s\n", d.c_str());
        std::fflush(stdout);
        failed += !r.pass;
      }
      return strict && failed ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
