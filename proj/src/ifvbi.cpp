#include "isac/ifvbi.hpp"

#include <cmath>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

namespace isac {

namespace {

double digamma(double x) { return boost::math::digamma(x); }

// a ln b - lnGamma(a) + (a - 1) <ln rho> - b <rho>
double gamma_log_density(double a, double b, double log_mean, double mean) {
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * log_mean - b * mean;
}

void check_y(const MeasurementModel& model, const std::vector<VecC>& y) {
  if (static_cast<int>(y.size()) != model.num_blocks())
    throw ConfigError("observation block count does not match the model");
  for (int b = 0; b < model.num_blocks(); ++b)
    if (y[b].size() != model.block(b).op->rows())
      throw ConfigError("observation length does not match block " + std::to_string(b));
}

double bernoulli_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

}  // namespace

double GammaPosterior::log_mean() const { return digamma(shape) - std::log(rate); }

double GammaPosterior::entropy() const {
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * digamma(shape);
}

VecR VariationalState::rho_mean() const { return rho_shape.cwiseQuotient(rho_rate); }

VecR VariationalState::rho_log_mean() const {
  VecR out(rho_shape.size());
  for (Index i = 0; i < out.size(); ++i) out[i] = digamma(rho_shape[i]) - std::log(rho_rate[i]);
  return out;
}

VariationalState init_state(const MeasurementModel& model, const std::vector<VecC>& y,
                            const ExtrinsicIn& ext, const HyperParams& hyper) {
  check_y(model, y);
  const Index D = model.cols();
  if (ext.pi.size() != D) throw ConfigError("extrinsic prior length does not match the model");
  VariationalState st;
  st.mu.resize(D);
  // matched filter scaled by 1/T_b: one majorization step from x = 0
  for (int b = 0; b < model.num_blocks(); ++b) {
    const double tb = model.T(b) > 0 ? model.T(b) : 1.0;
    st.mu.segment(model.block(b).offset, model.block_size(b)) = model.adjoint(b, y[b]) / tb;
  }
  st.w = st.mu;
  st.rho_shape = VecR::Ones(D);
  st.rho_rate = VecR::Ones(D);
  st.pi_post = ext.pi;
  for (int b = 0; b < model.num_blocks(); ++b) {
    const double n = static_cast<double>(y[b].size());
    const double power = y[b].squaredNorm() / n;
    const double g0 = power > 0 ? 10.0 / power : 1.0;
    GammaPosterior g;
    g.shape = hyper.c + n;
    g.rate = g.shape / g0;
    st.gamma.push_back(g);
  }
  st.sigma.resize(D);
  const VecR t = model.T_diag();
  for (Index i = 0; i < D; ++i)
    st.sigma[i] = 1.0 / (st.gamma[model.block_of(i)].mean() * t[i] + 1.0);
  refresh_anchor(st, model, y);
  return st;
}

void refresh_anchor(VariationalState& st, const MeasurementModel& model,
                    const std::vector<VecC>& y) {
  st.resid_w.resize(model.num_blocks());
  st.phiH_resid_w.resize(model.cols());
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& blk = model.block(b);
    st.resid_w[b] = y[b] - model.apply(b, st.w.segment(blk.offset, model.block_size(b)));
    st.phiH_resid_w.segment(blk.offset, model.block_size(b)) = model.adjoint(b, st.resid_w[b]);
  }
}

void update_qx(VariationalState& st, const MeasurementModel& model) {
  const VecR rho = st.rho_mean();
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& blk = model.block(b);
    const double g = st.gamma[b].mean();
    const double gT = g * blk.T;
    for (Index k = 0; k < model.block_size(b); ++k) {
      const Index i = blk.offset + k;
      const double prec = gT + rho[i];
      if (!(prec > 0) || !std::isfinite(prec))
        throw NumericError("update_qx: nonpositive or non-finite precision at entry " +
                           std::to_string(i));
      st.sigma[i] = 1.0 / prec;
      st.mu[i] = st.sigma[i] * (g * st.phiH_resid_w[i] + gT * st.w[i]);
    }
  }
}

void update_w(VariationalState& st, const MeasurementModel& model, const std::vector<VecC>& y) {
  st.w = st.mu;
  refresh_anchor(st, model, y);
}

namespace {

std::vector<double> relaxed_residual(const VariationalState& st, const MeasurementModel& model) {
  std::vector<double> g(model.num_blocks());
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& blk = model.block(b);
    const Index n = model.block_size(b);
    const VecC d = st.mu.segment(blk.offset, n) - st.w.segment(blk.offset, n);
    g[b] = st.resid_w[b].squaredNorm() -
           2.0 * std::real(d.dot(st.phiH_resid_w.segment(blk.offset, n))) +
           blk.T * (d.squaredNorm() + st.sigma.segment(blk.offset, n).sum());
  }
  return g;
}

}  // namespace

std::vector<double> expected_residual(const VariationalState& st, const MeasurementModel& model,
                                      const std::vector<VecC>& y) {
  if (st.engine == QxEngine::Relaxed) return relaxed_residual(st, model);
  std::vector<double> g(model.num_blocks());
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& blk = model.block(b);
    const Index n = model.block_size(b);
    const VecC r = y[b] - model.apply(b, st.mu.segment(blk.offset, n));
    double tr = 0.0;
    if (!st.sigma_full.empty()) {
      const MatC phi = model.dense(b);
      tr = std::real((phi.adjoint() * phi).cwiseProduct(st.sigma_full[b].transpose()).sum());
    } else {
      const VecR norms = model.dense(b).colwise().squaredNorm().transpose();
      tr = norms.dot(st.sigma.segment(blk.offset, n));
    }
    g[b] = r.squaredNorm() + tr;
  }
  return g;
}

void update_rho(VariationalState& st, const HyperParams& h) {
  for (Index i = 0; i < st.size(); ++i) {
    const double p = st.pi_post[i];
    st.rho_shape[i] = p * h.a + (1.0 - p) * h.abar + 1.0;
    st.rho_rate[i] = p * h.b + (1.0 - p) * h.bbar + std::norm(st.mu[i]) + st.sigma[i];
  }
}

void update_s(VariationalState& st, const HyperParams& h, const ExtrinsicIn& ext) {
  const VecR lm = st.rho_log_mean();
  const VecR m = st.rho_mean();
  for (Index i = 0; i < st.size(); ++i) {
    const double llr = gamma_log_density(h.a, h.b, lm[i], m[i]) -
                       gamma_log_density(h.abar, h.bbar, lm[i], m[i]);
    st.pi_post[i] = sigmoid(logit(clip_prob(ext.pi[i])) + llr);
  }
}

void update_gamma(VariationalState& st, const MeasurementModel& model, const std::vector<VecC>& y,
                  const HyperParams& h) {
  const std::vector<double> g = expected_residual(st, model, y);
  for (int b = 0; b < model.num_blocks(); ++b) {
    st.gamma[b].shape = h.c + static_cast<double>(y[b].size());
    st.gamma[b].rate = h.d + g[b];
  }
}

void update_hyperposteriors(VariationalState& st, const MeasurementModel& model,
                            const std::vector<VecC>& y, const HyperParams& hyper,
                            const ExtrinsicIn& ext) {
  update_rho(st, hyper);
  update_s(st, hyper, ext);
  update_gamma(st, model, y, hyper);
}

double elbo_from_parts(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& h, const ExtrinsicIn& ext,
                       const std::vector<double>& g_expect, double qx_entropy,
                       const VecR& second_moment) {
  double L = 0.0;
  for (int b = 0; b < model.num_blocks(); ++b) {
    const double n = static_cast<double>(y[b].size());
    const auto& g = st.gamma[b];
    L += n * (g.log_mean() - std::log(kPi)) - g.mean() * g_expect[b];
    L += h.c * std::log(h.d) - std::lgamma(h.c) + (h.c - 1.0) * g.log_mean() - h.d * g.mean();
    L += g.entropy();
  }
  const VecR lm = st.rho_log_mean();
  const VecR m = st.rho_mean();
  for (Index i = 0; i < st.size(); ++i) {
    const double p = st.pi_post[i];
    const double pin = clip_prob(ext.pi[i]);
    L += lm[i] - std::log(kPi) - m[i] * second_moment[i];
    L += p * gamma_log_density(h.a, h.b, lm[i], m[i]) +
         (1.0 - p) * gamma_log_density(h.abar, h.bbar, lm[i], m[i]);
    L += p * std::log(pin) + (1.0 - p) * std::log1p(-pin);
    L += GammaPosterior{st.rho_shape[i], st.rho_rate[i]}.entropy();
    L += bernoulli_entropy(p);
  }
  return L + qx_entropy;
}

namespace {

double diag_entropy(const VecR& sigma) {
  double e = 0.0;
  for (Index i = 0; i < sigma.size(); ++i) e += std::log(kPi * std::exp(1.0) * sigma[i]);
  return e;
}

VecR diag_second_moment(const VariationalState& st) {
  return st.mu.cwiseAbs2() + st.sigma;
}

}  // namespace

double relaxed_elbo(const VariationalState& st, const MeasurementModel& model,
                    const std::vector<VecC>& y, const HyperParams& hyper, const ExtrinsicIn& ext) {
  return elbo_from_parts(st, model, y, hyper, ext, relaxed_residual(st, model),
                         diag_entropy(st.sigma), diag_second_moment(st));
}

double exact_elbo_diag(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& hyper,
                       const ExtrinsicIn& ext) {
  std::vector<double> g(model.num_blocks());
  for (int b = 0; b < model.num_blocks(); ++b) {
    const auto& blk = model.block(b);
    const Index n = model.block_size(b);
    const MatC phi = model.dense(b);
    const VecC r = y[b] - phi * st.mu.segment(blk.offset, n);
    const VecR norms = phi.colwise().squaredNorm().transpose();
    g[b] = r.squaredNorm() + norms.dot(st.sigma.segment(blk.offset, n));
  }
  return elbo_from_parts(st, model, y, hyper, ext, g, diag_entropy(st.sigma),
                         diag_second_moment(st));
}

double relaxed_quadratic(const MeasurementModel& model, int b, const VecC& y_b, const VecC& x_b,
                         const VecC& w_b) {
  const VecC rw = y_b - model.apply(b, w_b);
  const VecC d = x_b - w_b;
  return rw.squaredNorm() - 2.0 * std::real(d.dot(model.adjoint(b, rw))) +
         model.T(b) * d.squaredNorm();
}

VecR extrinsic_out(const VariationalState& st, const ExtrinsicIn& ext) {
  if (ext.pi.size() != st.pi_post.size()) throw ConfigError("extrinsic length mismatch");
  VecR out(st.pi_post.size());
  for (Index i = 0; i < out.size(); ++i)
    out[i] = clip_prob(sigmoid(logit(clip_prob(st.pi_post[i])) - logit(clip_prob(ext.pi[i]))));
  return out;
}

std::vector<double> run_inner(VariationalState& st, const MeasurementModel& model,
                              const std::vector<VecC>& y, const HyperParams& hyper,
                              const ExtrinsicIn& ext, int iterations) {
  std::vector<double> trace;
  for (int it = 0; it < iterations; ++it) {
    update_qx(st, model);
    update_hyperposteriors(st, model, y, hyper, ext);
    update_w(st, model, y);
    trace.push_back(relaxed_elbo(st, model, y, hyper, ext));
  }
  return trace;
}

}  // namespace isac
