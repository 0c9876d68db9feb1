#pragma once

#include <array>
#include <string>
#include <vector>

#include "isac/dictionary.hpp"
#include "isac/prior_model.hpp"

namespace isac {

struct StepControl {
  double initial_step = 1.0;  // first trial moves by this fraction of the trust radius
  double shrink = 0.5;
  double c1 = 1e-4;
  int max_backtracks = 20;

  void validate() const;
};

/// Gaussian prior on the user position, N(mean, sigma_p2 / 2 per coordinate).
struct ThetaPrior {
  Position2D mean;
  double sigma_p2 = 1.0;
};

/// Feasible set and trust radii of the sensing parameters.
struct ThetaBounds {
  std::vector<Region> cells;  // r_q stays inside cells[q]
  Region user_box;
  double tau_limit = 0.0;     // |tau_o| <= tau_limit
  double radius_r = 2.5;      // meters
  double radius_pu = 1.0;     // meters
  double radius_tau = 0.0;    // seconds

  static ThetaBounds standard(const PositionGrid& grid, const ThetaPrior& prior, double bandwidth,
                              double user_halfwidth = 5.0);
};

/// Posterior summary that the surrogate is built from.
struct Posteriors {
  VecC mu;
  VecR sigma;
  std::array<double, 2> gamma{1.0, 1.0};  // <gamma_r>, <gamma_c>
};

struct ThetaGradient {
  std::vector<std::array<double, 2>> r;
  std::array<double, 2> pu{0.0, 0.0};
  double tau = 0.0;

  double max_abs_r() const;
};

/// Evaluates Q_theta and its gradient for fixed posteriors; the multi-bounce block
/// does not depend on theta and is folded in once.
class ThetaObjective {
 public:
  ThetaObjective(const ModelBuilder& builder, std::vector<VecC> y, Posteriors post,
                 ThetaPrior prior, bool use_prior = true);

  double value(const SensingParams& th) const;
  ThetaGradient gradient(const SensingParams& th) const;
  /// Central differences with steps of 1e-4 m (positions) and 1e-4 m / c (offset).
  ThetaGradient fd_gradient(const SensingParams& th, double h = 1e-4) const;
  /// gamma_b-weighted residual term of block b alone (0 radar, 1 comm), without the prior.
  double block_value(const SensingParams& th, int b) const;

 private:
  const ModelBuilder& builder_;
  std::vector<VecC> y_;
  Posteriors post_;
  ThetaPrior prior_;
  bool use_prior_;
  VecC mb_contrib_;
  double mb_trace_ = 0.0;
};

/// Direct evaluation through the dense assembled model (slow reference path).
double surrogate_q_theta(const ModelBuilder& builder, const SensingParams& th,
                         const Posteriors& post, const std::vector<VecC>& y,
                         const ThetaPrior* prior);

struct ArmijoRecord {
  std::string block;
  double before = 0.0;
  double after = 0.0;
  double step = 0.0;  // accepted max displacement, 0 when rejected
  int backtracks = 0;
  bool accepted = false;
};

/// Last accepted step size per block (gradient units); seeds the next trial step.
struct ArmijoMemory {
  double r = -1.0;
  double pu = -1.0;
  double tau = -1.0;
  double zeta = -1.0;
};

struct ThetaUpdateOptions {
  bool update_r = true;
  bool update_pu = true;
  bool update_tau = true;
};

/// Projected Armijo ascent in the order r, p_u, tau_o; returns one record per block.
std::vector<ArmijoRecord> update_theta(const ThetaObjective& obj, SensingParams& th,
                                       const ThetaBounds& bounds, const StepControl& ctl,
                                       ArmijoMemory& mem, const ThetaUpdateOptions& opt = {});

struct ZetaGradient {
  VecR alpha;
  VecR beta;
};

/// Expected log pseudo-likelihood over the nodes in `mask` under independent
/// Bernoulli(q_sbar) supports.
double pl_objective(const GridGraph& g, const MrfParams& z, const VecR& q_sbar,
                    const std::vector<bool>& mask);
ZetaGradient pl_grad_zeta(const GridGraph& g, const MrfParams& z, const VecR& q_sbar,
                          const std::vector<bool>& mask);
/// Interior nodes only; requires H, W >= 3.
ZetaGradient pl_grad_zeta(const GridGraph& g, const MrfParams& z, const VecR& q_sbar);

inline constexpr double kZetaClamp = 5.0;

struct ZetaUpdateOptions {
  double radius = 0.5;
  int steps = 1;
};

/// Projected Armijo ascent on the pseudo-likelihood, |alpha|, |beta| <= 5.
std::vector<ArmijoRecord> update_zeta(const GridGraph& g, MrfParams& z, const VecR& q_sbar,
                                      const StepControl& ctl, ArmijoMemory& mem,
                                      const ZetaUpdateOptions& opt = {});
std::vector<ArmijoRecord> update_zeta(const GridGraph& g, MrfParams& z, const VecR& q_sbar,
                                      const std::vector<bool>& mask, const StepControl& ctl,
                                      ArmijoMemory& mem, const ZetaUpdateOptions& opt = {});

inline constexpr double kLambdaMin = 0.01;
inline constexpr double kLambdaMax = 0.99;

/// lambda_q <- q(s_q = 1) / q(s_bar_q = 1), clamped to [0.01, 0.99].
void update_lambda_grid(VecR& lambda, const VecR& q_s, const VecR& q_sbar);
/// Bernoulli EM: lambda <- mean posterior activity, clamped.
double update_lambda_bernoulli(const VecR& q_s);

}  // namespace isac
