#include "isac/turbo.hpp"

#include <chrono>
#include <cmath>

#include "isac/baselines.hpp"

namespace isac {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Mrf: return "mrf";
    case Variant::Iid: return "iid";
    case Variant::Genie: return "genie";
    case Variant::NonRelaxed: return "non_relaxed";
  }
  return "unknown";
}

Variant parse_variant(const std::string& tag) {
  if (tag == "mrf") return Variant::Mrf;
  if (tag == "iid") return Variant::Iid;
  if (tag == "genie") return Variant::Genie;
  if (tag == "non_relaxed") return Variant::NonRelaxed;
  throw ConfigError("unknown variant tag: " + tag);
}

void EstimatorConfig::validate() const {
  if (inner_iterations < 1 || outer_iterations < 1) throw ConfigError("iteration caps must be >= 1");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (mrf_rounds < 1) throw ConfigError("mrf rounds must be >= 1");
  if (tau_search_points < 1) throw ConfigError("tau search needs at least one point");
  if (zeta.steps < 0 || !(zeta.radius > 0)) throw ConfigError("invalid zeta step options");
  step.validate();
}

VecR pack_xi(const SensingParams& th, const MrfParams* zeta, double c) {
  const Index Q = static_cast<Index>(th.r.size());
  const Index extra = zeta ? zeta->alpha.size() + zeta->beta.size() : 0;
  VecR xi(2 * Q + 3 + extra);
  for (Index q = 0; q < Q; ++q) {
    xi[2 * q] = th.r[q].x;
    xi[2 * q + 1] = th.r[q].y;
  }
  xi[2 * Q] = th.p_u.x;
  xi[2 * Q + 1] = th.p_u.y;
  xi[2 * Q + 2] = th.tau_o * c;
  if (zeta) xi.tail(extra) << zeta->alpha, zeta->beta;
  return xi;
}

bool check_convergence(const VecR& xi_t, const VecR& xi_t1, double epsilon) {
  if (xi_t.size() != xi_t1.size()) throw ConfigError("parameter vectors differ in length");
  return (xi_t1 - xi_t).norm() <= epsilon;
}

double initial_tau(const ModelBuilder& builder, const VecC& y_c, Position2D pu, int points) {
  const double lim = 2.0 / builder.ofdm().bandwidth();
  double best = 0.0;
  double best_val = -1.0;
  for (int k = 0; k < points; ++k) {
    const double t = points == 1 ? 0.0 : -lim + 2.0 * lim * k / (points - 1);
    const double v = std::norm(builder.comm_los_column(pu, t).dot(y_c));
    if (v > best_val) {
      best_val = v;
      best = t;
    }
  }
  return best;
}

namespace {

struct PriorWiring {
  const GridGraph& graph;
  Layout lay;
  const EstimatorConfig& cfg;
};

bool uses_mrf(Variant v) { return v != Variant::Iid; }

// Builds the prior activation vector of every coefficient.
ExtrinsicIn assemble_extrinsic(const Layout& lay, const HyperParams& h, const VecR& pi_r,
                               const VecR& pi_c) {
  ExtrinsicIn e;
  e.pi.resize(lay.total());
  e.pi[lay.radar_echo()] = h.lambda0_r;
  for (int q = 0; q < lay.Q; ++q) e.pi[lay.radar_grid(q)] = pi_r[q];
  e.pi[lay.comm_los()] = h.lambda0_c;
  for (int q = 0; q < lay.Q; ++q) e.pi[lay.comm_grid(q)] = pi_c[q];
  for (int j = 0; j < lay.UV; ++j) e.pi[lay.comm_mb(j)] = h.lambda_mb[j];
  return e;
}

struct PriorOut {
  ExtrinsicIn ext;
  VecR q_sbar;
};

PriorOut module_b(const PriorWiring& w, const HyperParams& h, const MrfParams& z,
                  const VecR& out_r, const VecR& out_c) {
  const int Q = w.lay.Q;
  if (!uses_mrf(w.cfg.variant)) {
    return {assemble_extrinsic(w.lay, h, VecR::Constant(Q, h.lambda_iid_r),
                               VecR::Constant(Q, h.lambda_iid_c)),
            VecR()};
  }
  const SupportPriors sp =
      run_module_b(w.graph, z, out_r, out_c, h.lambda_r, h.lambda_c, w.cfg.mrf_rounds);
  return {assemble_extrinsic(w.lay, h, sp.pi_r, sp.pi_c), sp.joint};
}

VecR grid_part(const VecR& v, int first, int Q) { return v.segment(first, Q); }

}  // namespace

EstimateResult run(const ModelBuilder& builder, const Observation& obs, HyperParams hyper,
                   const ThetaPrior& prior, const EstimatorConfig& cfg,
                   const std::optional<GenieInfo>& genie) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  cfg.validate();
  hyper.validate();
  const Layout lay = builder.layout();
  const int Q = lay.Q;
  if (hyper.lambda_r.size() != Q || hyper.lambda_c.size() != Q || hyper.lambda_mb.size() != lay.UV)
    throw ConfigError("hyperparameter lengths do not match the layout");
  if (cfg.variant == Variant::Genie && !genie)
    throw ConfigError("genie variant needs the true user position and offset");
  const std::vector<VecC> y{obs.y_r, obs.y_c};
  const GridGraph graph(builder.grid().H, builder.grid().W);
  const PriorWiring wiring{graph, lay, cfg};
  const double c = builder.ofdm().speed_of_light;
  const bool mrf = uses_mrf(cfg.variant);
  const bool exact = cfg.variant == Variant::NonRelaxed;

  SensingParams theta;
  if (genie) {
    theta = builder.initial_params(genie->p_u, genie->tau_o);
  } else {
    theta = builder.initial_params(prior.mean, 0.0);
    theta.tau_o = initial_tau(builder, obs.y_c, prior.mean, cfg.tau_search_points);
  }
  MrfParams zeta = MrfParams::uniform(graph, cfg.alpha0, cfg.beta0);
  const ThetaBounds bounds =
      ThetaBounds::standard(builder.grid(), prior, builder.ofdm().bandwidth(), cfg.user_halfwidth);
  ArmijoMemory mem;

  PriorOut pri = module_b(wiring, hyper, zeta, VecR::Constant(Q, 0.5), VecR::Constant(Q, 0.5));
  MeasurementModel model = assemble_measurement(builder, theta);
  VariationalState st = init_state(model, y, pri.ext, hyper);
  if (exact) st.engine = QxEngine::Exact;

  EstimateResult res;
  res.variant = to_string(cfg.variant);
  VecR xi = pack_xi(theta, mrf ? &zeta : nullptr, c);
  for (int t = 1; t <= cfg.outer_iterations; ++t) {
    const auto t_iter = clock::now();
    IterationRecord rec;
    rec.iteration = t;
    if (t > 1) {
      model = assemble_measurement(builder, theta);
      st.w = st.mu;  // anchor at the previous posterior mean
      refresh_anchor(st, model, y);
    }
    try {
      if (exact) {
        for (int it = 0; it < cfg.inner_iterations; ++it) {
          exact_update_qx(st, model, y, cfg.dense_cap);
          update_hyperposteriors(st, model, y, hyper, pri.ext);
          rec.inner_elbo.push_back(exact_elbo_full(st, model, y, hyper, pri.ext));
        }
      } else {
        rec.inner_elbo.push_back(relaxed_elbo(st, model, y, hyper, pri.ext));
        const std::vector<double> tr = run_inner(st, model, y, hyper, pri.ext, cfg.inner_iterations);
        rec.inner_elbo.insert(rec.inner_elbo.end(), tr.begin(), tr.end());
      }
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (outer iteration " + std::to_string(t) + ")");
    }
    for (int b = 0; b < 2; ++b) {
      const Index off = model.block(b).offset;
      const double r = (y[b] - model.apply(b, st.mu.segment(off, model.block_size(b)))).norm();
      (b == 0 ? rec.residual_r : rec.residual_c) = r;
    }

    // turbo exchange: extrinsic information of the grid supports goes to module B
    const VecR pi_out = extrinsic_out(st, pri.ext);
    const VecR out_r = grid_part(pi_out, lay.radar_grid(0), Q);
    const VecR out_c = grid_part(pi_out, lay.comm_grid(0), Q);
    pri = module_b(wiring, hyper, zeta, out_r, out_c);

    // M-step: sensing parameters, then MRF parameters, then activation probabilities
    if (cfg.learn_theta) {
      Posteriors post{st.mu, st.sigma, {st.gamma[0].mean(), st.gamma[1].mean()}};
      const ThetaObjective obj(builder, y, std::move(post), prior, true);
      ThetaUpdateOptions opt;
      opt.update_pu = !genie.has_value();
      opt.update_tau = !genie.has_value();
      rec.theta_steps = update_theta(obj, theta, bounds, cfg.step, mem, opt);
    }
    if (mrf && cfg.learn_zeta && cfg.zeta.steps > 0)
      rec.zeta_steps = update_zeta(graph, zeta, pri.q_sbar, cfg.step, mem, cfg.zeta);
    if (cfg.learn_lambda) {
      const VecR qs_r = grid_part(st.pi_post, lay.radar_grid(0), Q);
      const VecR qs_c = grid_part(st.pi_post, lay.comm_grid(0), Q);
      if (mrf) {
        update_lambda_grid(hyper.lambda_r, qs_r, pri.q_sbar);
        update_lambda_grid(hyper.lambda_c, qs_c, pri.q_sbar);
      } else {
        hyper.lambda_iid_r = update_lambda_bernoulli(qs_r);
        hyper.lambda_iid_c = update_lambda_bernoulli(qs_c);
      }
      hyper.lambda0_r = update_lambda_bernoulli(st.pi_post.segment(lay.radar_echo(), 1));
      hyper.lambda0_c = update_lambda_bernoulli(st.pi_post.segment(lay.comm_los(), 1));
      hyper.lambda_mb.setConstant(update_lambda_bernoulli(st.pi_post.segment(lay.comm_mb(0), lay.UV)));
    }
    // priors for the next E-step follow the updated MRF parameters
    const VecR q_sbar_keep = pri.q_sbar;
    pri = module_b(wiring, hyper, zeta, out_r, out_c);
    if (mrf) pri.q_sbar = q_sbar_keep;

    const VecR xi_next = pack_xi(theta, mrf ? &zeta : nullptr, c);
    rec.delta_xi = (xi_next - xi).norm();
    rec.delta_theta = (xi_next - xi).head(2 * Q + 3).norm();
    rec.delta_zeta = (xi_next - xi).tail(xi.size() - 2 * Q - 3).norm();
    const bool done = check_convergence(xi, xi_next, cfg.epsilon);
    xi = xi_next;
    rec.seconds = std::chrono::duration<double>(clock::now() - t_iter).count();
    res.trace.push_back(std::move(rec));
    res.iterations = t;
    if (done) {
      res.converged = true;
      break;
    }
  }

  res.theta = theta;
  res.zeta = zeta;
  res.hyper = hyper;
  res.x = st.mu;
  res.q_s = st.pi_post;
  res.q_sbar = pri.q_sbar;
  res.s_r.resize(Q);
  res.s_c.resize(Q);
  for (int q = 0; q < Q; ++q) {
    res.s_r[q] = st.pi_post[lay.radar_grid(q)] > 0.5 ? 1 : -1;
    res.s_c[q] = st.pi_post[lay.comm_grid(q)] > 0.5 ? 1 : -1;
  }
  res.seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return res;
}

}  // namespace isac
