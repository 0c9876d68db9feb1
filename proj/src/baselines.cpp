#include "isac/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace isac {

OmpResult omp_solve(const VecC& y, const MatC& phi, const OmpOptions& opt) {
  if (y.size() != phi.rows()) throw ConfigError("omp: observation length mismatch");
  const Index n = phi.cols();
  if (opt.max_atoms > n) throw ConfigError("omp: sparsity exceeds the column count");
  const Index cap = opt.max_atoms < 0 ? std::min(n, phi.rows()) : opt.max_atoms;
  VecR norms = phi.colwise().norm().transpose();
  OmpResult res;
  res.residual = y;
  std::vector<bool> used(n, false);
  while (static_cast<Index>(res.support.size()) < cap &&
         res.residual.squaredNorm() > opt.residual_tol_sq) {
    const VecC corr = phi.adjoint() * res.residual;
    Index best = -1;
    double best_val = -1.0;
    for (Index j = 0; j < n; ++j) {
      if (used[j] || norms[j] == 0.0) continue;
      const double v = std::abs(corr[j]) / norms[j];
      if (v > best_val) {
        best_val = v;
        best = j;
      }
    }
    if (best < 0) break;
    used[best] = true;
    res.support.push_back(best);
    MatC sub(phi.rows(), static_cast<Index>(res.support.size()));
    for (std::size_t k = 0; k < res.support.size(); ++k) sub.col(k) = phi.col(res.support[k]);
    res.coefficients = sub.colPivHouseholderQr().solve(y);
    res.residual = y - sub * res.coefficients;
  }
  if (res.support.empty()) res.coefficients.resize(0);
  return res;
}

ExactPosterior exact_qx(const VecC& y, const MatC& phi, double gamma, const VecR& rho,
                        Index dense_cap) {
  if (phi.cols() > dense_cap) throw ConfigError("exact_qx: dimension exceeds the dense cap");
  if (rho.size() != phi.cols() || y.size() != phi.rows())
    throw ConfigError("exact_qx: size mismatch");
  if (!std::isfinite(gamma) || !rho.allFinite() || !y.allFinite() || !phi.allFinite())
    throw NumericError("exact_qx: non-finite input");
  MatC A = gamma * (phi.adjoint() * phi);
  A.diagonal() += rho.cast<cd>();
  Eigen::LLT<MatC> llt(A);
  if (llt.info() != Eigen::Success) throw NumericError("exact_qx: precision matrix not positive definite");
  ExactPosterior p;
  p.sigma = llt.solve(MatC::Identity(A.rows(), A.cols()));
  p.mu = llt.solve(gamma * (phi.adjoint() * y));
  return p;
}

void exact_update_qx(VariationalState& st, const MeasurementModel& model,
                     const std::vector<VecC>& y, Index dense_cap) {
  const VecR rho = st.rho_mean();
  st.engine = QxEngine::Exact;
  st.sigma_full.resize(model.num_blocks());
  for (int b = 0; b < model.num_blocks(); ++b) {
    const Index off = model.block(b).offset;
    const Index n = model.block_size(b);
    ExactPosterior p = exact_qx(y[b], model.dense(b), st.gamma[b].mean(), rho.segment(off, n),
                                dense_cap);
    st.mu.segment(off, n) = p.mu;
    st.sigma.segment(off, n) = p.sigma.diagonal().real();
    st.sigma_full[b] = std::move(p.sigma);
  }
  st.w = st.mu;
}

double exact_elbo_full(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& hyper,
                       const ExtrinsicIn& ext) {
  if (static_cast<int>(st.sigma_full.size()) != model.num_blocks())
    throw ConfigError("exact ELBO needs the full covariance");
  std::vector<double> g(model.num_blocks());
  double entropy = 0.0;
  for (int b = 0; b < model.num_blocks(); ++b) {
    const Index off = model.block(b).offset;
    const Index n = model.block_size(b);
    const MatC phi = model.dense(b);
    const VecC r = y[b] - phi * st.mu.segment(off, n);
    const double tr = std::real((phi.adjoint() * phi).cwiseProduct(st.sigma_full[b].transpose()).sum());
    g[b] = r.squaredNorm() + tr;
    Eigen::LLT<MatC> llt(st.sigma_full[b]);
    if (llt.info() != Eigen::Success) throw NumericError("posterior covariance not positive definite");
    double logdet = 0.0;
    for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(std::real(llt.matrixL()(i, i)));
    entropy += static_cast<double>(n) * std::log(kPi * std::exp(1.0)) + logdet;
  }
  const VecR second = st.mu.cwiseAbs2() + st.sigma;
  return elbo_from_parts(st, model, y, hyper, ext, g, entropy, second);
}

EstimateResult run_omp(const VariantInputs& in) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!in.builder) throw ConfigError("omp: missing model builder");
  const ModelBuilder& builder = *in.builder;
  const Layout lay = builder.layout();
  SensingParams th = builder.initial_params(in.prior.mean, 0.0);
  th.tau_o = initial_tau(builder, in.obs.y_c, in.prior.mean, in.cfg.tau_search_points);
  const MeasurementModel model = builder.assemble(th, AssemblyMode::Dense);
  const std::vector<VecC> y{in.obs.y_r, in.obs.y_c};
  EstimateResult res;
  res.variant = "omp";
  res.theta = th;
  res.x = VecC::Zero(lay.total());
  res.q_s = VecR::Zero(lay.total());
  for (int b = 0; b < 2; ++b) {
    const double energy = b == 0 ? in.noise_energy_r : in.noise_energy_c;
    OmpOptions opt;
    opt.residual_tol_sq = std::max(1.2 * energy, 1e-12 * y[b].squaredNorm());
    const MatC phi = model.dense(b);
    opt.max_atoms = static_cast<int>(std::min(phi.cols(), phi.rows() / 2));
    const OmpResult r = omp_solve(y[b], phi, opt);
    const Index off = model.block(b).offset;
    for (std::size_t k = 0; k < r.support.size(); ++k) {
      res.x[off + r.support[k]] = r.coefficients[static_cast<Index>(k)];
      res.q_s[off + r.support[k]] = 1.0;
    }
  }
  res.s_r.resize(lay.Q);
  res.s_c.resize(lay.Q);
  for (int q = 0; q < lay.Q; ++q) {
    res.s_r[q] = res.q_s[lay.radar_grid(q)] > 0.5 ? 1 : -1;
    res.s_c[q] = res.q_s[lay.comm_grid(q)] > 0.5 ? 1 : -1;
  }
  res.hyper = in.hyper;
  res.iterations = 1;
  res.converged = true;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EstimateResult run_variant(const std::string& tag, const VariantInputs& in) {
  if (tag == "omp") return run_omp(in);
  const Variant v = parse_variant(tag);
  if (!in.builder) throw ConfigError("run_variant: missing model builder");
  EstimatorConfig cfg = in.cfg;
  cfg.variant = v;
  return run(*in.builder, in.obs, in.hyper, in.prior, cfg,
             v == Variant::Genie ? in.genie : std::nullopt);
}

}  // namespace isac
