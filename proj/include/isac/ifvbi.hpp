#pragma once

#include <vector>

#include "isac/dictionary.hpp"
#include "isac/prior_model.hpp"

namespace isac {

/// Gamma(shape, rate).
struct GammaPosterior {
  double shape = 1.0;
  double rate = 1.0;

  double mean() const { return shape / rate; }
  double log_mean() const;  // E[ln x], digamma(shape) - ln(rate)
  double entropy() const;
};

/// Prior activation probability of every coefficient, length D.
struct ExtrinsicIn {
  VecR pi;
};

enum class QxEngine { Relaxed, Exact };

struct VariationalState {
  VecC mu;
  VecR sigma;  // diagonal of the posterior covariance
  VecR rho_shape;
  VecR rho_rate;
  VecR pi_post;  // q(s_i = 1)
  std::vector<GammaPosterior> gamma;  // one per measurement block
  VecC w;

  // quantities at the anchor w, refreshed by update_w
  std::vector<VecC> resid_w;  // y_b - Phi_b w_b
  VecC phiH_resid_w;          // Phi^H (y - Phi w)

  QxEngine engine = QxEngine::Relaxed;
  // exact engine only: dense per-block covariance
  std::vector<MatC> sigma_full;

  VecR rho_mean() const;
  VecR rho_log_mean() const;
  Index size() const { return mu.size(); }
};

/// mu = w = Phi^H y / T_b, <rho> = 1, pi_post = pi_in, noise precision about ten times the
/// inverse per-entry observation power.
VariationalState init_state(const MeasurementModel& model, const std::vector<VecC>& y,
                            const ExtrinsicIn& ext, const HyperParams& hyper);

/// Recomputes the anchor residuals for the current w.
void refresh_anchor(VariationalState& st, const MeasurementModel& model,
                    const std::vector<VecC>& y);

/// sigma_i = 1 / (<gamma_b> T_b + <rho_i>); mu = sigma (<gamma> Phi^H (y - Phi w) + <gamma> T w).
void update_qx(VariationalState& st, const MeasurementModel& model);

/// w <- mu, followed by an anchor refresh.
void update_w(VariationalState& st, const MeasurementModel& model, const std::vector<VecC>& y);

/// E[g_b] under q(x): the relaxed bound of E||y_b - Phi_b x_b||^2 (exact value for the
/// exact engine).
std::vector<double> expected_residual(const VariationalState& st, const MeasurementModel& model,
                                      const std::vector<VecC>& y);

/// q(rho), then q(s), then q(gamma) per block.
void update_hyperposteriors(VariationalState& st, const MeasurementModel& model,
                            const std::vector<VecC>& y, const HyperParams& hyper,
                            const ExtrinsicIn& ext);

/// Sub-steps, exposed for testing.
void update_rho(VariationalState& st, const HyperParams& hyper);
void update_s(VariationalState& st, const HyperParams& hyper, const ExtrinsicIn& ext);
void update_gamma(VariationalState& st, const MeasurementModel& model, const std::vector<VecC>& y,
                  const HyperParams& hyper);

/// ELBO with a caller-supplied E[||y_b - Phi_b x||^2] per block and q(x) entropy.
double elbo_from_parts(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& hyper,
                       const ExtrinsicIn& ext, const std::vector<double>& g_expect,
                       double qx_entropy, const VecR& second_moment);

/// Relaxed ELBO at the current anchor w.
double relaxed_elbo(const VariationalState& st, const MeasurementModel& model,
                    const std::vector<VecC>& y, const HyperParams& hyper, const ExtrinsicIn& ext);

/// Exact ELBO of the same factorized q (diagonal covariance).
double exact_elbo_diag(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& hyper,
                       const ExtrinsicIn& ext);

/// E_q[g(x, w)] for a point mass q(x) = delta(x) evaluated at the anchor w.
double relaxed_quadratic(const MeasurementModel& model, int b, const VecC& y_b, const VecC& x_b,
                         const VecC& w_b);

/// pi_out proportional to pi_post / pi_in, per coefficient, clipped.
VecR extrinsic_out(const VariationalState& st, const ExtrinsicIn& ext);

/// A few inner iterations: qx, hyperposteriors, w. Returns the relaxed ELBO after each.
std::vector<double> run_inner(VariationalState& st, const MeasurementModel& model,
                              const std::vector<VecC>& y, const HyperParams& hyper,
                              const ExtrinsicIn& ext, int iterations);

}  // namespace isac
