#include "isac/prior_model.hpp"

#include <algorithm>
#include <cmath>

namespace isac {

HyperParams HyperParams::defaults(int Q, int UV) {
  HyperParams h;
  h.lambda_r = VecR::Constant(Q, 0.5);
  h.lambda_c = VecR::Constant(Q, 0.5);
  h.lambda_mb = VecR::Constant(UV, 0.1);
  return h;
}

void HyperParams::validate() const {
  if (!(a > 0 && b > 0 && abar > 0 && bbar > 0 && c > 0 && d > 0))
    throw ConfigError("gamma hyperparameters must be positive");
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  auto all01 = [&](const VecR& v) {
    return std::all_of(v.data(), v.data() + v.size(), in01);
  };
  if (!all01(lambda_r) || !all01(lambda_c) || !all01(lambda_mb) || !in01(lambda0_r) ||
      !in01(lambda0_c) || !in01(lambda_iid_r) || !in01(lambda_iid_c))
    throw ConfigError("activation probabilities must lie in [0,1]");
}

GridGraph::GridGraph(int H, int W) : H_(H), W_(W) {
  if (H < 1 || W < 1) throw ConfigError("grid graph needs positive dimensions");
  const int Q = H * W;
  nbr_.assign(Q, {-1, -1, -1, -1});
  nbr_edge_.assign(Q, {-1, -1, -1, -1});
  for (int q = 0; q < Q; ++q) {
    const int row = q % H;
    const int col = q / H;
    if (row + 1 < H) {
      const int e = static_cast<int>(edges_.size());
      edges_.emplace_back(q, q + 1);
      nbr_[q][kBottom] = q + 1;
      nbr_edge_[q][kBottom] = e;
      nbr_[q + 1][kTop] = q;
      nbr_edge_[q + 1][kTop] = e;
    }
    if (col + 1 < W) {
      const int e = static_cast<int>(edges_.size());
      edges_.emplace_back(q, q + H);
      nbr_[q][kRight] = q + H;
      nbr_edge_[q][kRight] = e;
      nbr_[q + H][kLeft] = q;
      nbr_edge_[q + H][kLeft] = e;
    }
  }
}

int GridGraph::degree(int q) const {
  return static_cast<int>(std::count_if(nbr_[q].begin(), nbr_[q].end(), [](int n) { return n >= 0; }));
}

std::vector<bool> GridGraph::interior_mask() const {
  std::vector<bool> m(num_nodes());
  for (int q = 0; q < num_nodes(); ++q) m[q] = degree(q) == 4;
  return m;
}

std::vector<int> GridGraph::interior_nodes() const {
  std::vector<int> out;
  for (int q = 0; q < num_nodes(); ++q)
    if (degree(q) == 4) out.push_back(q);
  return out;
}

MrfParams MrfParams::uniform(const GridGraph& g, double alpha, double beta) {
  return {VecR::Constant(g.num_nodes(), alpha), VecR::Constant(g.num_edges(), beta)};
}

namespace {

void check_sizes(const GridGraph& g, const MrfParams& z) {
  if (z.alpha.size() != g.num_nodes() || z.beta.size() != g.num_edges())
    throw ConfigError("MRF parameter sizes do not match the grid graph");
}

}  // namespace

double mrf_unnormalized_logp(const GridGraph& g, const MrfParams& z, std::span<const int> s) {
  check_sizes(g, z);
  if (static_cast<int>(s.size()) != g.num_nodes()) throw ConfigError("support length mismatch");
  double v = 0.0;
  for (int q = 0; q < g.num_nodes(); ++q) {
    double h = 0.0;
    for (int d = 0; d < 4; ++d) {
      const int n = g.neighbor(q, static_cast<Direction>(d));
      if (n >= 0) h += z.beta[g.edge_at(q, static_cast<Direction>(d))] * s[n];
    }
    v += (0.5 * h - z.alpha[q]) * s[q];
  }
  return v;
}

BruteForceResult brute_force_mrf(const GridGraph& g, const MrfParams& z,
                                 const std::optional<VecR>& evidence) {
  check_sizes(g, z);
  const int Q = g.num_nodes();
  if (Q > kBruteForceMaxNodes) throw ConfigError("brute-force enumeration limited to 20 nodes");
  if (evidence && evidence->size() != Q) throw ConfigError("evidence length mismatch");
  const std::size_t n = std::size_t{1} << Q;
  std::vector<double> lp(n);
  std::vector<int> s(Q);
  for (std::size_t m = 0; m < n; ++m) {
    for (int q = 0; q < Q; ++q) s[q] = (m >> q) & 1 ? 1 : -1;
    double v = mrf_unnormalized_logp(g, z, s);
    if (evidence)
      for (int q = 0; q < Q; ++q) v += 0.5 * (*evidence)[q] * s[q];
    lp[m] = v;
  }
  const double mx = *std::max_element(lp.begin(), lp.end());
  double total = 0.0;
  BruteForceResult r;
  r.marginals = VecR::Zero(Q);
  r.pairwise.assign(g.num_edges(), Eigen::Matrix2d::Zero());
  for (std::size_t m = 0; m < n; ++m) {
    const double w = std::exp(lp[m] - mx);
    total += w;
    for (int q = 0; q < Q; ++q)
      if ((m >> q) & 1) r.marginals[q] += w;
    for (int e = 0; e < g.num_edges(); ++e) {
      const auto [p, q] = g.edge(e);
      r.pairwise[e]((m >> p) & 1, (m >> q) & 1) += w;
    }
  }
  r.logZ = mx + std::log(total);
  r.marginals /= total;
  for (auto& t : r.pairwise) t /= total;
  return r;
}

GibbsSampler::GibbsSampler(const GridGraph& g, const MrfParams& z, std::uint64_t seed)
    : g_(g), z_(z), rng_(seed), s_(g.num_nodes()) {
  check_sizes(g, z);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : s_) v = coin(rng_) ? 1 : -1;
}

void GibbsSampler::sweep() {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int q = 0; q < g_.num_nodes(); ++q) {
    double h = 0.0;
    for (int d = 0; d < 4; ++d) {
      const int n = g_.neighbor(q, static_cast<Direction>(d));
      if (n >= 0) h += z_.beta[g_.edge_at(q, static_cast<Direction>(d))] * s_[n];
    }
    const double p1 = sigmoid(2.0 * (h - z_.alpha[q]));
    s_[q] = u(rng_) < p1 ? 1 : -1;
  }
}

VecR gibbs_marginals(const GridGraph& g, const MrfParams& z, std::uint64_t seed, int sweeps,
                     int burn_in) {
  GibbsSampler gs(g, z, seed);
  VecR acc = VecR::Zero(g.num_nodes());
  int kept = 0;
  for (int t = 0; t < sweeps; ++t) {
    gs.sweep();
    if (t < burn_in) continue;
    for (int q = 0; q < g.num_nodes(); ++q)
      if (gs.state()[q] > 0) acc[q] += 1.0;
    ++kept;
  }
  if (kept == 0) throw ConfigError("no Gibbs sweeps kept after burn-in");
  return acc / kept;
}

PriorSample sample_three_layer_prior(const HyperParams& h, const GridGraph& g, const MrfParams& z,
                                     std::uint64_t seed, int sweeps, int burn_in) {
  const int Q = g.num_nodes();
  if (h.lambda_r.size() != Q || h.lambda_c.size() != Q)
    throw ConfigError("hyperparameter lengths do not match the grid");
  if (sweeps <= burn_in) throw ConfigError("sweeps must exceed burn-in");
  GibbsSampler gs(g, z, derive_seed(seed, 1));
  for (int t = 0; t < sweeps; ++t) gs.sweep();
  PriorSample out;
  out.s_bar = gs.state();
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  out.s_r.resize(Q);
  out.s_c.resize(Q);
  for (int q = 0; q < Q; ++q) {
    const bool on = out.s_bar[q] > 0;
    const double ur = u(rng);
    const double uc = u(rng);
    out.s_r[q] = on && ur < h.lambda_r[q] ? 1 : -1;
    out.s_c[q] = on && uc < h.lambda_c[q] ? 1 : -1;
  }
  auto draw = [&](const std::vector<int>& s, VecR& rho, VecC& x) {
    rho.resize(Q);
    x.resize(Q);
    for (int q = 0; q < Q; ++q) {
      const double shape = s[q] > 0 ? h.a : h.abar;
      const double rate = s[q] > 0 ? h.b : h.bbar;
      rho[q] = std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
      std::normal_distribution<double> n(0.0, std::sqrt(0.5 / rho[q]));
      const double re = n(rng);
      const double im = n(rng);
      x[q] = cd(re, im);
    }
  };
  draw(out.s_r, out.rho_r, out.x_r);
  draw(out.s_c, out.rho_c, out.x_c);
  return out;
}

}  // namespace isac
