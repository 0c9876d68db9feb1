#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isac/dictionary.hpp"
#include "isac/ifvbi.hpp"
#include "isac/mrf_inference.hpp"
#include "isac/mstep.hpp"

namespace isac {

enum class Variant { Mrf, Iid, Genie, NonRelaxed };

std::string to_string(Variant v);
Variant parse_variant(const std::string& tag);

struct EstimatorConfig {
  int inner_iterations = 5;
  int outer_iterations = 20;
  double epsilon = 1e-2;
  Variant variant = Variant::Mrf;
  std::uint64_t seed = 0;
  int mrf_rounds = 4;
  StepControl step;
  ZetaUpdateOptions zeta;
  double user_halfwidth = 5.0;  // meters, feasible box for p_u around its prior mean
  double alpha0 = 0.3;
  double beta0 = 0.6;
  int tau_search_points = 65;
  bool learn_theta = true;
  bool learn_zeta = true;
  bool learn_lambda = true;
  Index dense_cap = 4000;

  void validate() const;
};

/// Ground truth handed to the genie-aided variant.
struct GenieInfo {
  Position2D p_u;
  double tau_o = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  std::vector<double> inner_elbo;
  double delta_xi = 0.0;
  double delta_theta = 0.0;  // sensing-parameter part of delta_xi
  double delta_zeta = 0.0;
  double residual_r = 0.0;
  double residual_c = 0.0;
  std::vector<ArmijoRecord> theta_steps;
  std::vector<ArmijoRecord> zeta_steps;
  double seconds = 0.0;
};

struct EstimateResult {
  std::string variant;
  SensingParams theta;
  MrfParams zeta;
  HyperParams hyper;
  VecC x;
  VecR q_s;     // q(s_i = 1) per coefficient
  VecR q_sbar;  // joint support posterior per grid node (empty for i.i.d.)
  std::vector<int> s_r;  // +-1 per grid node
  std::vector<int> s_c;
  std::vector<IterationRecord> trace;
  bool converged = false;
  int iterations = 0;
  double seconds = 0.0;
};

/// Concatenated real parameter vector: r (m), p_u (m), tau_o * c (m), alpha, beta.
VecR pack_xi(const SensingParams& th, const MrfParams* zeta, double c);

bool check_convergence(const VecR& xi_t, const VecR& xi_t1, double epsilon);

/// Coarse search of the offset maximizing the line-of-sight correlation.
double initial_tau(const ModelBuilder& builder, const VecC& y_c, Position2D pu, int points);

/// Alternates the E-step, the turbo exchange and the M-step until xi settles.
EstimateResult run(const ModelBuilder& builder, const Observation& obs, HyperParams hyper,
                   const ThetaPrior& prior, const EstimatorConfig& cfg,
                   const std::optional<GenieInfo>& genie = std::nullopt);

}  // namespace isac
