#include "isac/mstep.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace isac {

void StepControl::validate() const {
  if (!(initial_step > 0 && shrink > 0 && shrink < 1 && c1 > 0 && max_backtracks > 0))
    throw ConfigError("step control parameters must be positive (shrink in (0,1))");
}

ThetaBounds ThetaBounds::standard(const PositionGrid& grid, const ThetaPrior& prior,
                                  double bandwidth, double user_halfwidth) {
  ThetaBounds b;
  for (int q = 0; q < grid.size(); ++q) b.cells.push_back(grid.cell(q));
  b.user_box = {prior.mean.x - user_halfwidth, prior.mean.x + user_halfwidth,
                prior.mean.y - user_halfwidth, prior.mean.y + user_halfwidth};
  b.tau_limit = 2.0 / bandwidth;
  b.radius_r = 0.25 * grid.resolution;
  b.radius_pu = 1.0;
  b.radius_tau = 0.25 / bandwidth;
  return b;
}

double ThetaGradient::max_abs_r() const {
  double m = 0.0;
  for (const auto& g : r) m = std::max({m, std::abs(g[0]), std::abs(g[1])});
  return m;
}

namespace {

constexpr int kRadar = 0;
constexpr int kComm = 1;

}  // namespace

ThetaObjective::ThetaObjective(const ModelBuilder& builder, std::vector<VecC> y, Posteriors post,
                               ThetaPrior prior, bool use_prior)
    : builder_(builder),
      y_(std::move(y)),
      post_(std::move(post)),
      prior_(prior),
      use_prior_(use_prior) {
  const Layout lay = builder_.layout();
  if (y_.size() != 2 || post_.mu.size() != lay.total() || post_.sigma.size() != lay.total())
    throw ConfigError("theta objective: posterior size does not match the layout");
  const auto& mb = *builder_.multibounce_operator();
  const Index off = lay.comm_mb(0);
  mb_contrib_ = mb.apply(post_.mu.segment(off, lay.UV));
  mb_trace_ = mb.column_sq_norms().dot(post_.sigma.segment(off, lay.UV));
}

double ThetaObjective::block_value(const SensingParams& th, int b) const {
  const Layout lay = builder_.layout();
  if (b == kRadar) {
    const MatC R = builder_.radar_matrix(th);
    const VecC e = y_[0] - R * post_.mu.head(lay.radar_size());
    const VecR n = R.colwise().squaredNorm().transpose();
    return -post_.gamma[0] * (e.squaredNorm() + n.dot(post_.sigma.head(lay.radar_size())));
  }
  const MatC C = builder_.comm_param_matrix(th);
  const Index off = lay.comm_los();
  const VecC e = y_[1] - C * post_.mu.segment(off, lay.Q + 1) - mb_contrib_;
  const VecR n = C.colwise().squaredNorm().transpose();
  return -post_.gamma[1] *
         (e.squaredNorm() + n.dot(post_.sigma.segment(off, lay.Q + 1)) + mb_trace_);
}

double ThetaObjective::value(const SensingParams& th) const {
  double v = block_value(th, kRadar) + block_value(th, kComm);
  if (use_prior_) {
    const double dx = th.p_u.x - prior_.mean.x;
    const double dy = th.p_u.y - prior_.mean.y;
    v -= (dx * dx + dy * dy) / prior_.sigma_p2;
  }
  return v;
}

ThetaGradient ThetaObjective::gradient(const SensingParams& th) const {
  const Layout lay = builder_.layout();
  const int Q = lay.Q;
  ThetaGradient g;
  g.r.assign(Q, {0.0, 0.0});

  // radar block: column 0 depends on p_u, column q + 1 on r_q
  std::vector<ColumnJacobian> rj(Q + 1);
  rj[0] = builder_.radar_column_jac(th.p_u);
  for (int q = 0; q < Q; ++q) rj[q + 1] = builder_.radar_column_jac(th.r[q]);
  VecC er = y_[0];
  for (int i = 0; i <= Q; ++i) er -= post_.mu[i] * rj[i].value;
  const double gr = post_.gamma[0];
  auto term = [](double gamma, const VecC& e, cd mu, double sigma, const VecC& phi,
                 const VecC& dphi) {
    return gamma * (2.0 * std::real(mu * e.dot(dphi)) - 2.0 * sigma * std::real(phi.dot(dphi)));
  };
  for (int k = 0; k < 2; ++k)
    g.pu[k] += term(gr, er, post_.mu[0], post_.sigma[0], rj[0].value, rj[0].d[k]);
  for (int q = 0; q < Q; ++q)
    for (int k = 0; k < 2; ++k)
      g.r[q][k] +=
          term(gr, er, post_.mu[q + 1], post_.sigma[q + 1], rj[q + 1].value, rj[q + 1].d[k]);

  // comm block: los column depends on (p_u, tau), scatter columns on (r_q, p_u, tau)
  const Index off = lay.comm_los();
  const ColumnJacobian lj = builder_.comm_los_column_jac(th.p_u, th.tau_o);
  std::vector<ColumnJacobian> cj(Q);
  for (int q = 0; q < Q; ++q) cj[q] = builder_.comm_scatter_column_jac(th.r[q], th.p_u, th.tau_o);
  VecC ec = y_[1] - mb_contrib_ - post_.mu[off] * lj.value;
  for (int q = 0; q < Q; ++q) ec -= post_.mu[off + 1 + q] * cj[q].value;
  const double gc = post_.gamma[1];
  g.pu[0] += term(gc, ec, post_.mu[off], post_.sigma[off], lj.value, lj.d[0]);
  g.pu[1] += term(gc, ec, post_.mu[off], post_.sigma[off], lj.value, lj.d[1]);
  g.tau += term(gc, ec, post_.mu[off], post_.sigma[off], lj.value, lj.d[2]);
  for (int q = 0; q < Q; ++q) {
    const cd mu = post_.mu[off + 1 + q];
    const double s = post_.sigma[off + 1 + q];
    g.r[q][0] += term(gc, ec, mu, s, cj[q].value, cj[q].d[0]);
    g.r[q][1] += term(gc, ec, mu, s, cj[q].value, cj[q].d[1]);
    g.pu[0] += term(gc, ec, mu, s, cj[q].value, cj[q].d[2]);
    g.pu[1] += term(gc, ec, mu, s, cj[q].value, cj[q].d[3]);
    g.tau += term(gc, ec, mu, s, cj[q].value, cj[q].d[4]);
  }
  if (use_prior_) {
    g.pu[0] -= 2.0 * (th.p_u.x - prior_.mean.x) / prior_.sigma_p2;
    g.pu[1] -= 2.0 * (th.p_u.y - prior_.mean.y) / prior_.sigma_p2;
  }
  return g;
}

ThetaGradient ThetaObjective::fd_gradient(const SensingParams& th, double h) const {
  ThetaGradient g;
  g.r.assign(th.r.size(), {0.0, 0.0});
  SensingParams t = th;
  auto central = [&](double& slot, double step) {
    const double keep = slot;
    slot = keep + step;
    const double fp = value(t);
    slot = keep - step;
    const double fm = value(t);
    slot = keep;
    return (fp - fm) / (2.0 * step);
  };
  for (std::size_t q = 0; q < th.r.size(); ++q) {
    g.r[q][0] = central(t.r[q].x, h);
    g.r[q][1] = central(t.r[q].y, h);
  }
  g.pu[0] = central(t.p_u.x, h);
  g.pu[1] = central(t.p_u.y, h);
  g.tau = central(t.tau_o, h / builder_.ofdm().speed_of_light);
  return g;
}

double surrogate_q_theta(const ModelBuilder& builder, const SensingParams& th,
                         const Posteriors& post, const std::vector<VecC>& y,
                         const ThetaPrior* prior) {
  const MeasurementModel m = builder.assemble(th, AssemblyMode::Dense);
  double v = 0.0;
  for (int b = 0; b < 2; ++b) {
    const MatC phi = m.dense(b);
    const Index off = m.block(b).offset;
    const Index n = m.block_size(b);
    const VecC e = y[b] - phi * post.mu.segment(off, n);
    // tr(Gamma Phi Sigma Phi^H) with diagonal Sigma
    double tr = 0.0;
    for (Index i = 0; i < n; ++i) tr += post.sigma[off + i] * phi.col(i).squaredNorm();
    v -= post.gamma[b] * (std::real(e.dot(e)) + tr);
  }
  if (prior) {
    const double dx = th.p_u.x - prior->mean.x;
    const double dy = th.p_u.y - prior->mean.y;
    v -= (dx * dx + dy * dy) / prior->sigma_p2;
  }
  return v;
}

namespace {

using Project = std::function<void(VecR&)>;

ArmijoRecord armijo_block(const std::string& name, const std::function<double(const VecR&)>& f,
                          const VecR& x0, double f0, const VecR& g, const Project& project,
                          double radius, const StepControl& ctl, double& mem, VecR& x_out) {
  ArmijoRecord rec;
  rec.block = name;
  rec.before = f0;
  rec.after = f0;
  x_out = x0;
  const double ginf = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  if (!(ginf > 0) || !std::isfinite(ginf)) return rec;
  // trial step: grow the remembered step, never move farther than the radius
  const double cap = radius / ginf;
  const double t0 = mem > 0 ? std::min(2.0 * mem, cap) : cap * ctl.initial_step;
  double t = t0;
  for (int k = 0; k <= ctl.max_backtracks; ++k) {
    VecR x = x0 + t * g;
    project(x);
    const double moved = (x - x0).cwiseAbs().maxCoeff();
    if (moved == 0.0) break;  // pinned against the feasible set
    const double f1 = f(x);
    if (std::isfinite(f1) && f1 >= f0 + ctl.c1 * g.dot(x - x0)) {
      rec.after = f1;
      rec.accepted = true;
      rec.step = moved;
      rec.backtracks = k;
      x_out = std::move(x);
      mem = t;
      return rec;
    }
    rec.backtracks = k + 1;
    t *= ctl.shrink;
  }
  mem = t0 * 0.25;
  return rec;
}

}  // namespace

std::vector<ArmijoRecord> update_theta(const ThetaObjective& obj, SensingParams& th,
                                       const ThetaBounds& bounds, const StepControl& ctl,
                                       ArmijoMemory& mem, const ThetaUpdateOptions& opt) {
  ctl.validate();
  std::vector<ArmijoRecord> recs;
  const int Q = static_cast<int>(th.r.size());
  if (static_cast<int>(bounds.cells.size()) != Q)
    throw ConfigError("theta bounds do not match the grid");
  double f = obj.value(th);

  if (opt.update_r) {
    const ThetaGradient g = obj.gradient(th);
    VecR x0(2 * Q), gv(2 * Q);
    for (int q = 0; q < Q; ++q) {
      x0[2 * q] = th.r[q].x;
      x0[2 * q + 1] = th.r[q].y;
      gv[2 * q] = g.r[q][0];
      gv[2 * q + 1] = g.r[q][1];
    }
    auto unpack = [&](const VecR& x) {
      SensingParams t = th;
      for (int q = 0; q < Q; ++q) t.r[q] = {x[2 * q], x[2 * q + 1]};
      return t;
    };
    auto project = [&](VecR& x) {
      for (int q = 0; q < Q; ++q) {
        const Region& c = bounds.cells[q];
        x[2 * q] = std::clamp(x[2 * q], c.x_min, c.x_max);
        x[2 * q + 1] = std::clamp(x[2 * q + 1], c.y_min, c.y_max);
      }
    };
    VecR x;
    recs.push_back(armijo_block(
        "r", [&](const VecR& v) { return obj.value(unpack(v)); }, x0, f, gv, project,
        bounds.radius_r, ctl, mem.r, x));
    th = unpack(x);
    f = recs.back().after;
  }
  if (opt.update_pu) {
    const ThetaGradient g = obj.gradient(th);
    VecR x0(2), gv(2);
    x0 << th.p_u.x, th.p_u.y;
    gv << g.pu[0], g.pu[1];
    auto project = [&](VecR& x) {
      x[0] = std::clamp(x[0], bounds.user_box.x_min, bounds.user_box.x_max);
      x[1] = std::clamp(x[1], bounds.user_box.y_min, bounds.user_box.y_max);
    };
    auto unpack = [&](const VecR& v) {
      SensingParams t = th;
      t.p_u = {v[0], v[1]};
      return t;
    };
    VecR x;
    recs.push_back(armijo_block(
        "p_u", [&](const VecR& v) { return obj.value(unpack(v)); }, x0, f, gv, project,
        bounds.radius_pu, ctl, mem.pu, x));
    th.p_u = {x[0], x[1]};
    f = recs.back().after;
  }
  if (opt.update_tau) {
    const ThetaGradient g = obj.gradient(th);
    VecR x0(1), gv(1);
    x0 << th.tau_o;
    gv << g.tau;
    auto project = [&](VecR& x) { x[0] = std::clamp(x[0], -bounds.tau_limit, bounds.tau_limit); };
    auto unpack = [&](const VecR& v) {
      SensingParams t = th;
      t.tau_o = v[0];
      return t;
    };
    VecR x;
    recs.push_back(armijo_block(
        "tau_o", [&](const VecR& v) { return obj.value(unpack(v)); }, x0, f, gv, project,
        bounds.radius_tau, ctl, mem.tau, x));
    th.tau_o = x[0];
  }
  return recs;
}

namespace {

double log2cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a));
}

struct NodeTerms {
  double value = 0.0;
  double d_alpha = 0.0;
  std::array<double, 4> d_beta{};  // per direction
};

// Expectations for one node under independent neighbor Bernoullis.
NodeTerms node_terms(const GridGraph& g, const MrfParams& z, const VecR& q_sbar, int q) {
  std::array<int, 4> nb{};
  std::array<double, 4> beta{};
  std::array<Direction, 4> dirs{};
  int k = 0;
  for (int d = 0; d < 4; ++d) {
    const int n = g.neighbor(q, static_cast<Direction>(d));
    if (n < 0) continue;
    nb[k] = n;
    beta[k] = z.beta[g.edge_at(q, static_cast<Direction>(d))];
    dirs[k] = static_cast<Direction>(d);
    ++k;
  }
  const double mq = 2.0 * q_sbar[q] - 1.0;
  const double aq = z.alpha[q];
  double e_l2c = 0.0;
  double e_tanh = 0.0;
  std::array<double, 4> e_s_tanh{};
  double lin = 0.0;
  for (int j = 0; j < k; ++j) lin += beta[j] * (2.0 * q_sbar[nb[j]] - 1.0);
  for (int cfg = 0; cfg < (1 << k); ++cfg) {
    double w = 1.0;
    double h = 0.0;
    std::array<int, 4> s{};
    for (int j = 0; j < k; ++j) {
      s[j] = (cfg >> j) & 1 ? 1 : -1;
      const double p = q_sbar[nb[j]];
      w *= s[j] > 0 ? p : 1.0 - p;
      h += beta[j] * s[j];
    }
    if (w == 0.0) continue;
    const double th = std::tanh(h - aq);
    e_l2c += w * log2cosh(h - aq);
    e_tanh += w * th;
    for (int j = 0; j < k; ++j) e_s_tanh[j] += w * s[j] * th;
  }
  NodeTerms t;
  t.value = -aq * mq + mq * lin - e_l2c;
  t.d_alpha = -mq + e_tanh;
  for (int j = 0; j < k; ++j)
    t.d_beta[dirs[j]] = mq * (2.0 * q_sbar[nb[j]] - 1.0) - e_s_tanh[j];
  return t;
}

void check_pl_inputs(const GridGraph& g, const MrfParams& z, const VecR& q_sbar,
                     const std::vector<bool>& mask) {
  if (z.alpha.size() != g.num_nodes() || z.beta.size() != g.num_edges() ||
      q_sbar.size() != g.num_nodes() || static_cast<int>(mask.size()) != g.num_nodes())
    throw ConfigError("pseudo-likelihood: size mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw ConfigError("pseudo-likelihood: empty node set");
}

std::vector<bool> interior_or_throw(const GridGraph& g) {
  if (g.H() < 3 || g.W() < 3)
    throw ConfigError("pseudo-likelihood needs an interior node (H, W >= 3)");
  return g.interior_mask();
}

}  // namespace

double pl_objective(const GridGraph& g, const MrfParams& z, const VecR& q_sbar,
                    const std::vector<bool>& mask) {
  check_pl_inputs(g, z, q_sbar, mask);
  double v = 0.0;
  for (int q = 0; q < g.num_nodes(); ++q)
    if (mask[q]) v += node_terms(g, z, q_sbar, q).value;
  return v;
}

ZetaGradient pl_grad_zeta(const GridGraph& g, const MrfParams& z, const VecR& q_sbar,
                          const std::vector<bool>& mask) {
  check_pl_inputs(g, z, q_sbar, mask);
  ZetaGradient gr{VecR::Zero(g.num_nodes()), VecR::Zero(g.num_edges())};
  for (int q = 0; q < g.num_nodes(); ++q) {
    if (!mask[q]) continue;
    const NodeTerms t = node_terms(g, z, q_sbar, q);
    gr.alpha[q] = t.d_alpha;
    for (int d = 0; d < 4; ++d) {
      const int e = g.edge_at(q, static_cast<Direction>(d));
      if (e >= 0) gr.beta[e] += t.d_beta[d];
    }
  }
  return gr;
}

ZetaGradient pl_grad_zeta(const GridGraph& g, const MrfParams& z, const VecR& q_sbar) {
  return pl_grad_zeta(g, z, q_sbar, interior_or_throw(g));
}

std::vector<ArmijoRecord> update_zeta(const GridGraph& g, MrfParams& z, const VecR& q_sbar,
                                      const StepControl& ctl, ArmijoMemory& mem,
                                      const ZetaUpdateOptions& opt) {
  return update_zeta(g, z, q_sbar, interior_or_throw(g), ctl, mem, opt);
}

std::vector<ArmijoRecord> update_zeta(const GridGraph& g, MrfParams& z, const VecR& q_sbar,
                                      const std::vector<bool>& mask, const StepControl& ctl,
                                      ArmijoMemory& mem, const ZetaUpdateOptions& opt) {
  ctl.validate();
  const Index Q = g.num_nodes();
  const Index E = g.num_edges();
  auto unpack = [&](const VecR& x) {
    return MrfParams{x.head(Q), x.tail(E)};
  };
  auto project = [](VecR& x) { x = x.cwiseMax(-kZetaClamp).cwiseMin(kZetaClamp); };
  std::vector<ArmijoRecord> recs;
  for (int s = 0; s < opt.steps; ++s) {
    VecR x0(Q + E);
    x0 << z.alpha, z.beta;
    const ZetaGradient gr = pl_grad_zeta(g, z, q_sbar, mask);
    VecR gv(Q + E);
    gv << gr.alpha, gr.beta;
    const double f0 = pl_objective(g, z, q_sbar, mask);
    VecR x;
    recs.push_back(armijo_block(
        "zeta", [&](const VecR& v) { return pl_objective(g, unpack(v), q_sbar, mask); }, x0, f0,
        gv, project, opt.radius, ctl, mem.zeta, x));
    z = unpack(x);
    if (!recs.back().accepted) break;
  }
  return recs;
}

void update_lambda_grid(VecR& lambda, const VecR& q_s, const VecR& q_sbar) {
  if (lambda.size() != q_s.size() || q_s.size() != q_sbar.size())
    throw ConfigError("lambda update: size mismatch");
  for (Index q = 0; q < lambda.size(); ++q) {
    const double ratio = q_sbar[q] > 0 ? q_s[q] / q_sbar[q] : kLambdaMax;
    lambda[q] = std::clamp(ratio, kLambdaMin, kLambdaMax);
  }
}

double update_lambda_bernoulli(const VecR& q_s) {
  if (q_s.size() == 0) return 0.5;
  return std::clamp(q_s.mean(), kLambdaMin, kLambdaMax);
}

}  // namespace isac
