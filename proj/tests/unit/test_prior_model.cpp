#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "isac/prior_model.hpp"

using namespace isac;
using testutil::unif;

namespace {

// independent enumeration: node term -alpha s, edge term beta s s'
VecR enumerate(int H, int W, const VecR& alpha, const std::vector<std::array<int, 3>>& edges,
               double* logZ = nullptr) {
  const int Q = H * W;
  VecR m = VecR::Zero(Q);
  double Z = 0.0;
  for (int mask = 0; mask < (1 << Q); ++mask) {
    auto s = [&](int q) { return (mask >> q) & 1 ? 1.0 : -1.0; };
    double lp = 0.0;
    for (int q = 0; q < Q; ++q) lp -= alpha[q] * s(q);
    for (const auto& e : edges) lp += 1e-3 * e[2] * s(e[0]) * s(e[1]);
    const double w = std::exp(lp);
    Z += w;
    for (int q = 0; q < Q; ++q)
      if (s(q) > 0) m[q] += w;
  }
  if (logZ) *logZ = std::log(Z);
  return m / Z;
}

// edge list with beta stored in thousandths so the tuple stays integral
std::vector<std::array<int, 3>> edge_list(const GridGraph& g, const VecR& beta) {
  std::vector<std::array<int, 3>> out;
  for (int e = 0; e < g.num_edges(); ++e)
    out.push_back({g.edge(e).first, g.edge(e).second, static_cast<int>(std::lround(beta[e] * 1e3))});
  return out;
}

MrfParams random_params(const GridGraph& g, std::mt19937_64& rng, double amax, double bmax) {
  MrfParams z{VecR(g.num_nodes()), VecR(g.num_edges())};
  for (Index i = 0; i < z.alpha.size(); ++i) z.alpha[i] = std::round(unif(rng, -amax, amax) * 1e3) / 1e3;
  for (Index i = 0; i < z.beta.size(); ++i) z.beta[i] = std::round(unif(rng, -bmax, bmax) * 1e3) / 1e3;
  return z;
}

}  // namespace

TEST_CASE("grid graph structure") {
  const GridGraph g(3, 4);
  CHECK(g.num_nodes() == 12);
  CHECK(g.num_edges() == 3 * 3 + 4 * 2);
  CHECK(g.neighbor(0, kBottom) == 1);
  CHECK(g.neighbor(0, kRight) == 3);
  CHECK(g.neighbor(0, kLeft) == -1);
  CHECK(g.neighbor(0, kTop) == -1);
  CHECK(g.degree(0) == 2);
  CHECK(g.degree(1) == 3);
  CHECK(g.degree(4) == 4);
  CHECK(g.interior_nodes() == std::vector<int>{4, 7});
  for (int q = 0; q < g.num_nodes(); ++q)
    for (int d = 0; d < 4; ++d) {
      const auto dir = static_cast<Direction>(d);
      const int n = g.neighbor(q, dir);
      if (n < 0) continue;
      CHECK(g.neighbor(n, opposite(dir)) == q);
      CHECK(g.edge_at(n, opposite(dir)) == g.edge_at(q, dir));
      const auto [a, b] = g.edge(g.edge_at(q, dir));
      CHECK(a < b);
      CHECK(((a == q && b == n) || (a == n && b == q)));
    }
  CHECK(GridGraph(1, 1).num_edges() == 0);
  CHECK_THROWS_AS(GridGraph(0, 3), ConfigError);
}

TEST_CASE("unnormalized log-probability") {
  const GridGraph g1(1, 1);
  const MrfParams z1{VecR::Constant(1, 0.7), VecR(0)};
  CHECK(mrf_unnormalized_logp(g1, z1, std::vector<int>{1}) == doctest::Approx(-0.7));
  CHECK(mrf_unnormalized_logp(g1, z1, std::vector<int>{-1}) == doctest::Approx(0.7));

  const GridGraph g2(1, 2);
  MrfParams z2{VecR(2), VecR::Constant(1, 1.3)};
  z2.alpha << 0.2, -0.5;
  CHECK(mrf_unnormalized_logp(g2, z2, std::vector<int>{1, 1}) == doctest::Approx(1.3 - 0.2 + 0.5));
  CHECK(mrf_unnormalized_logp(g2, z2, std::vector<int>{1, -1}) == doctest::Approx(-1.3 - 0.2 - 0.5));
  CHECK(mrf_unnormalized_logp(g2, z2, std::vector<int>{-1, -1}) == doctest::Approx(1.3 + 0.2 - 0.5));
  CHECK_THROWS_AS(mrf_unnormalized_logp(g2, z2, std::vector<int>{1}), ConfigError);
  CHECK_THROWS_AS(mrf_unnormalized_logp(g2, MrfParams{VecR(2), VecR(3)}, std::vector<int>{1, 1}),
                  ConfigError);
}

TEST_CASE("brute force against an independent enumeration") {
  std::mt19937_64 rng(21);
  for (auto [H, W] : {std::pair{1, 1}, {1, 5}, {2, 3}, {3, 3}, {3, 4}}) {
    const GridGraph g(H, W);
    for (int rep = 0; rep < 5; ++rep) {
      const MrfParams z = random_params(g, rng, 2.0, 1.5);
      double lz = 0.0;
      const VecR ref = enumerate(H, W, z.alpha, edge_list(g, z.beta), &lz);
      const BruteForceResult r = brute_force_mrf(g, z);
      CHECK((r.marginals - ref).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(r.logZ == doctest::Approx(lz).epsilon(1e-12));
      for (int e = 0; e < g.num_edges(); ++e) {
        const auto [p, q] = g.edge(e);
        CHECK(r.pairwise[e].sum() == doctest::Approx(1.0));
        CHECK(r.pairwise[e].row(1).sum() == doctest::Approx(r.marginals[p]));
        CHECK(r.pairwise[e].col(1).sum() == doctest::Approx(r.marginals[q]));
      }
    }
  }
  CHECK_THROWS_AS(brute_force_mrf(GridGraph(5, 5), MrfParams::uniform(GridGraph(5, 5), 0, 0)),
                  ConfigError);
}

TEST_CASE("brute force closed forms") {
  const GridGraph g1(1, 1);
  for (double a : {-1.5, 0.0, 0.4}) {
    const BruteForceResult r = brute_force_mrf(g1, {VecR::Constant(1, a), VecR(0)});
    CHECK(r.marginals[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0 * a))));
    CHECK(r.logZ == doctest::Approx(std::log(2.0 * std::cosh(a))));
  }
  // zero coupling factorizes
  const GridGraph g(2, 3);
  std::mt19937_64 rng(22);
  MrfParams z = random_params(g, rng, 2.0, 0.0);
  z.beta.setZero();
  const BruteForceResult r = brute_force_mrf(g, z);
  for (int q = 0; q < g.num_nodes(); ++q)
    CHECK(r.marginals[q] == doctest::Approx(sigmoid(-2.0 * z.alpha[q])));
  // evidence L adds L to the log-odds of an isolated node
  const BruteForceResult re = brute_force_mrf(g1, {VecR::Constant(1, 0.3), VecR(0)}, VecR::Constant(1, 1.1));
  CHECK(logit(re.marginals[0]) == doctest::Approx(1.1 - 0.6));
}

TEST_CASE("Gibbs marginals agree with enumeration") {
  const GridGraph g(3, 3);
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 3; ++rep) {
    const MrfParams z = random_params(g, rng, 0.5, 0.4);
    const VecR exact = brute_force_mrf(g, z).marginals;
    const VecR est = gibbs_marginals(g, z, 100 + rep, 20000, 1000);
    CHECK((est - exact).cwiseAbs().maxCoeff() < 0.02);
  }
  CHECK_THROWS_AS(gibbs_marginals(g, MrfParams::uniform(g, 0, 0), 1, 10, 10), ConfigError);
}

TEST_CASE("three-layer prior sampling") {
  const GridGraph g(10, 10);
  HyperParams h = HyperParams::defaults(100, 4);
  h.validate();

  // inactive common support forces inactive channel supports
  const PriorSample off = sample_three_layer_prior(h, g, MrfParams::uniform(g, 10.0, 0.0), 1, 50, 10);
  for (int q = 0; q < 100; ++q) {
    CHECK(off.s_bar[q] == -1);
    CHECK(off.s_r[q] == -1);
    CHECK(off.s_c[q] == -1);
  }

  // active common support: P(s = 1) equals lambda, precisions follow the two gammas
  h.lambda_r.setConstant(0.3);
  h.lambda_c.setConstant(0.8);
  int nr = 0, nc = 0, n = 0;
  double rho_on = 0.0, rho_off = 0.0, x2_on = 0.0, x2_off = 0.0;
  int n_on = 0, n_off = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const PriorSample s = sample_three_layer_prior(h, g, MrfParams::uniform(g, -10.0, 0.0), seed, 20, 5);
    for (int q = 0; q < 100; ++q) {
      CHECK(s.s_bar[q] == 1);
      nr += s.s_r[q] > 0;
      nc += s.s_c[q] > 0;
      ++n;
      if (s.s_r[q] > 0) {
        rho_on += s.rho_r[q];
        x2_on += std::norm(s.x_r[q]) * s.rho_r[q];
        ++n_on;
      } else {
        rho_off += s.rho_r[q];
        x2_off += std::norm(s.x_r[q]) * s.rho_r[q];
        ++n_off;
      }
    }
  }
  CHECK(static_cast<double>(nr) / n == doctest::Approx(0.3).epsilon(0.05 / 0.3));
  CHECK(static_cast<double>(nc) / n == doctest::Approx(0.8).epsilon(0.05 / 0.8));
  CHECK(rho_on / n_on == doctest::Approx(h.a / h.b).epsilon(0.1));
  CHECK(rho_off / n_off == doctest::Approx(h.abar / h.bbar).epsilon(0.1));
  // rho |x|^2 is unit exponential whatever the state
  CHECK(x2_on / n_on == doctest::Approx(1.0).epsilon(0.1));
  CHECK(x2_off / n_off == doctest::Approx(1.0).epsilon(0.1));

  // the same seed reproduces the sample
  const MrfParams z = MrfParams::uniform(g, 0.2, 0.3);
  const PriorSample a = sample_three_layer_prior(h, g, z, 5, 30, 10);
  const PriorSample b = sample_three_layer_prior(h, g, z, 5, 30, 10);
  CHECK(a.s_bar == b.s_bar);
  CHECK(a.x_c == b.x_c);
}

TEST_CASE("hyperparameter validation") {
  HyperParams h = HyperParams::defaults(4, 2);
  CHECK(h.lambda_r.size() == 4);
  CHECK(h.lambda_mb.size() == 2);
  CHECK_NOTHROW(h.validate());
  h.bbar = 0.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = HyperParams::defaults(4, 2);
  h.lambda_c[1] = 1.2;
  CHECK_THROWS_AS(h.validate(), ConfigError);
}
