#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "helpers.hpp"
#include "isac/baselines.hpp"
#include "isac/ifvbi.hpp"

using namespace isac;
using testutil::randn;
using testutil::randn_vec;
using testutil::unif;

namespace {

struct Problem {
  MeasurementModel model;
  std::vector<VecC> y;
  VecC x;
};

// two blocks, sparse truth, noise precision gamma
Problem make_problem(std::mt19937_64& rng, Index rows, Index cols, int active, double gamma) {
  Problem p;
  std::vector<MatC> blocks{randn(rng, rows, cols) / std::sqrt(double(rows)),
                           randn(rng, rows, cols) / std::sqrt(double(rows))};
  p.model = MeasurementModel::from_dense(blocks);
  compute_T(p.model);
  p.x = VecC::Zero(2 * cols);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < active; ++k) p.x[b * cols + k * 3] = cd(unif(rng, 1, 2), unif(rng, -1, 1));
  for (int b = 0; b < 2; ++b) {
    VecC n = randn_vec(rng, rows) / std::sqrt(gamma);
    p.y.push_back(blocks[b] * p.x.segment(b * cols, cols) + n);
  }
  return p;
}

ExtrinsicIn flat(Index D, double p) { return {VecR::Constant(D, p)}; }

}  // namespace

TEST_CASE("gamma posterior moments") {
  const GammaPosterior g{1.0, 2.0};
  CHECK(g.mean() == doctest::Approx(0.5));
  CHECK(g.log_mean() == doctest::Approx(-0.5772156649015329 - std::log(2.0)));
  CHECK(g.entropy() == doctest::Approx(1.0 - std::log(2.0)));
  // E[ln x] by quadrature for shape 3.5, rate 0.7
  const GammaPosterior h{3.5, 0.7};
  double acc = 0.0, norm = 0.0;
  for (int i = 1; i < 400000; ++i) {
    const double x = i * 1e-4;
    const double w = std::pow(x, h.shape - 1.0) * std::exp(-h.rate * x);
    acc += w * std::log(x);
    norm += w;
  }
  CHECK(h.log_mean() == doctest::Approx(acc / norm).epsilon(1e-6));
}

TEST_CASE("initial state is the scaled matched filter") {
  std::mt19937_64 rng(41);
  const Problem p = make_problem(rng, 30, 8, 2, 100.0);
  const VariationalState st = init_state(p.model, p.y, flat(16, 0.3), HyperParams::defaults(1, 1));
  for (int b = 0; b < 2; ++b) {
    const VecC ref = p.model.dense(b).adjoint() * p.y[b] / p.model.T(b);
    CHECK((st.mu.segment(b * 8, 8) - ref).norm() < 1e-12);
  }
  CHECK(st.w == st.mu);
  CHECK(st.pi_post == VecR::Constant(16, 0.3));
  CHECK(st.gamma.size() == 2u);
  for (int b = 0; b < 2; ++b)
    CHECK((st.resid_w[b] - (p.y[b] - p.model.dense(b) * st.w.segment(b * 8, 8))).norm() < 1e-12);
  CHECK_THROWS_AS(init_state(p.model, {p.y[0]}, flat(16, 0.3), HyperParams::defaults(1, 1)),
                  ConfigError);
  CHECK_THROWS_AS(init_state(p.model, p.y, flat(15, 0.3), HyperParams::defaults(1, 1)), ConfigError);
}

TEST_CASE("q(x) iteration converges to the ridge solution for fixed hyperparameters") {
  std::mt19937_64 rng(42);
  const Problem p = make_problem(rng, 25, 6, 2, 50.0);
  VariationalState st = init_state(p.model, p.y, flat(12, 0.5), HyperParams::defaults(1, 1));
  for (Index i = 0; i < 12; ++i) {
    st.rho_shape[i] = 2.0;
    st.rho_rate[i] = unif(rng, 0.5, 4.0);
  }
  st.gamma = {GammaPosterior{10.0, 1.0}, GammaPosterior{30.0, 2.0}};
  for (int it = 0; it < 3000; ++it) {
    update_qx(st, p.model);
    update_w(st, p.model, p.y);
  }
  const VecR rho = st.rho_mean();
  for (int b = 0; b < 2; ++b) {
    const MatC phi = p.model.dense(b);
    const double g = st.gamma[b].mean();
    MatC A = g * phi.adjoint() * phi;
    for (int k = 0; k < 6; ++k) A(k, k) += rho[b * 6 + k];
    const VecC ref = A.ldlt().solve(g * phi.adjoint() * p.y[b]);
    CHECK((st.mu.segment(b * 6, 6) - ref).norm() < 1e-8 * ref.norm());
    for (int k = 0; k < 6; ++k)
      CHECK(st.sigma[b * 6 + k] == doctest::Approx(1.0 / (g * p.model.T(b) + rho[b * 6 + k])));
  }
  // the dense posterior of the baselines agrees
  for (int b = 0; b < 2; ++b) {
    const ExactPosterior ex = exact_qx(p.y[b], p.model.dense(b), st.gamma[b].mean(), rho.segment(b * 6, 6));
    CHECK((st.mu.segment(b * 6, 6) - ex.mu).cwiseAbs().maxCoeff() < 1e-6);
  }
  // at the fixed point another sweep leaves mu in place
  const VecC before = st.mu;
  update_qx(st, p.model);
  CHECK((st.mu - before).norm() < 1e-10 * before.norm());
}

TEST_CASE("huge precision drives the mean to zero") {
  std::mt19937_64 rng(43);
  const Problem p = make_problem(rng, 20, 5, 1, 100.0);
  VariationalState st = init_state(p.model, p.y, flat(10, 0.5), HyperParams::defaults(1, 1));
  st.rho_rate.setConstant(1e-12);
  update_qx(st, p.model);
  CHECK(st.mu.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(st.sigma.maxCoeff() < 1e-11);
  st.rho_shape[3] = -1.0;
  st.gamma[0].rate = 1e300;
  st.gamma[0].shape = 1e-300;
  CHECK_THROWS_AS(update_qx(st, p.model), NumericError);
}

TEST_CASE("relaxed quadratic majorizes the residual and touches it at the anchor") {
  std::mt19937_64 rng(44);
  const Problem p = make_problem(rng, 15, 9, 2, 10.0);
  for (int rep = 0; rep < 50; ++rep) {
    const int b = rep % 2;
    const VecC x = randn_vec(rng, 9);
    const VecC w = randn_vec(rng, 9);
    const MatC phi = p.model.dense(b);
    const double exact = (p.y[b] - phi * x).squaredNorm();
    CHECK(relaxed_quadratic(p.model, b, p.y[b], x, w) >= exact - 1e-10);
    CHECK(relaxed_quadratic(p.model, b, p.y[b], x, x) == doctest::Approx(exact).epsilon(1e-12));
    // the gradient in x at x = w matches that of the exact residual
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      VecC e = VecC::Zero(9);
      e[k] = h;
      const double dg = relaxed_quadratic(p.model, b, p.y[b], w + e, w) -
                        relaxed_quadratic(p.model, b, p.y[b], w - e, w);
      const double df = (p.y[b] - phi * (w + e)).squaredNorm() - (p.y[b] - phi * (w - e)).squaredNorm();
      CHECK(dg / (2 * h) == doctest::Approx(df / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("relaxed expected residual bounds the exact one") {
  std::mt19937_64 rng(45);
  const Problem p = make_problem(rng, 20, 6, 2, 20.0);
  VariationalState st = init_state(p.model, p.y, flat(12, 0.5), HyperParams::defaults(1, 1));
  for (int it = 0; it < 5; ++it) {
    st.mu = randn_vec(rng, 12);
    for (Index i = 0; i < 12; ++i) st.sigma[i] = unif(rng, 0.01, 1.0);
    const auto relaxed = expected_residual(st, p.model, p.y);
    st.engine = QxEngine::Exact;
    const auto exact = expected_residual(st, p.model, p.y);
    st.engine = QxEngine::Relaxed;
    for (int b = 0; b < 2; ++b) CHECK(relaxed[b] >= exact[b] - 1e-10);
    CHECK(relaxed_elbo(st, p.model, p.y, HyperParams::defaults(1, 1), flat(12, 0.5)) <=
          exact_elbo_diag(st, p.model, p.y, HyperParams::defaults(1, 1), flat(12, 0.5)) + 1e-9);
  }
}

TEST_CASE("support posterior limits") {
  std::mt19937_64 rng(46);
  const Problem p = make_problem(rng, 20, 5, 1, 100.0);
  const HyperParams h = HyperParams::defaults(1, 1);
  VariationalState st = init_state(p.model, p.y, flat(10, 0.5), h);
  ExtrinsicIn ext{VecR::Constant(10, 0.5)};
  ext.pi[0] = 1.0;
  ext.pi[1] = 0.0;
  ext.pi[3] = 0.01;
  st.mu.setZero();
  st.sigma.setConstant(1e-8);
  st.mu[2] = 3.0;  // strong coefficient: precision mean about 1/9
  st.pi_post = ext.pi;
  update_rho(st, h);
  update_s(st, h, ext);
  CHECK(st.pi_post[0] >= 1.0 - 1e-9);
  CHECK(st.pi_post[1] <= 1e-6);
  CHECK(st.pi_post[2] > 0.99);
  // a vanishing coefficient under a sparse prior looks inactive
  CHECK(st.pi_post[3] < 1e-6);

  // with a = abar and a neutral prior the switch is at <rho> = ln(b/bbar) / (b - bbar)
  const double thr = std::log(h.b / h.bbar) / (h.b - h.bbar);
  for (double r : {0.5 * thr, 0.9 * thr, 1.1 * thr, 2.0 * thr}) {
    st.rho_shape[5] = 50.0;
    st.rho_rate[5] = 50.0 / r;
    update_s(st, h, flat(10, 0.5));
    CHECK((st.pi_post[5] > 0.5) == (r < thr));
  }

  // q(rho) update: shape and rate are the posterior mixtures
  st.pi_post[4] = 0.25;
  update_rho(st, h);
  CHECK(st.rho_shape[4] == doctest::Approx(0.25 * h.a + 0.75 * h.abar + 1.0));
  CHECK(st.rho_rate[4] == doctest::Approx(0.25 * h.b + 0.75 * h.bbar + 1e-8));
}

TEST_CASE("extrinsic output divides out the prior") {
  VariationalState st;
  st.pi_post = VecR(3);
  st.pi_post << 0.3, 0.5, 0.9;
  ExtrinsicIn same{st.pi_post};
  const VecR o1 = extrinsic_out(st, same);
  for (int i = 0; i < 3; ++i) CHECK(o1[i] == doctest::Approx(0.5));
  const VecR o2 = extrinsic_out(st, flat(3, 0.5));
  for (int i = 0; i < 3; ++i) CHECK(o2[i] == doctest::Approx(st.pi_post[i]));
  // combining the extrinsic output with the prior recovers the posterior
  ExtrinsicIn pr{VecR(3)};
  pr.pi << 0.2, 0.7, 0.4;
  const VecR o3 = extrinsic_out(st, pr);
  for (int i = 0; i < 3; ++i)
    CHECK(sigmoid(logit(o3[i]) + logit(pr.pi[i])) == doctest::Approx(st.pi_post[i]));
  CHECK_THROWS_AS(extrinsic_out(st, flat(2, 0.5)), ConfigError);
}

TEST_CASE("inner iterations raise the relaxed ELBO and learn the noise level") {
  std::mt19937_64 rng(47);
  const double gamma_true = 400.0;
  const Problem p = make_problem(rng, 200, 20, 3, gamma_true);
  const HyperParams h = HyperParams::defaults(1, 1);
  const ExtrinsicIn ext = flat(40, 0.05);
  VariationalState st = init_state(p.model, p.y, ext, h);
  double prev = relaxed_elbo(st, p.model, p.y, h, ext);
  const std::vector<double> trace = run_inner(st, p.model, p.y, h, ext, 400);
  for (double v : trace) {
    CHECK(v >= prev - 1e-8 * std::abs(prev));
    prev = v;
  }
  for (int b = 0; b < 2; ++b) CHECK(st.gamma[b].mean() == doctest::Approx(gamma_true).epsilon(0.2));
  for (Index i = 0; i < 40; ++i) CHECK((st.pi_post[i] > 0.5) == (p.x[i] != cd(0.0)));
  CHECK((st.mu - p.x).norm() < 0.1 * p.x.norm());
}

TEST_CASE("orthonormal columns give the scalar ridge posterior") {
  std::mt19937_64 rng(48);
  const MatC Qm = Eigen::HouseholderQR<MatC>(randn(rng, 10, 10)).householderQ();
  MeasurementModel m = MeasurementModel::from_dense({Qm.leftCols(4)});
  compute_T(m);
  const std::vector<VecC> y{randn_vec(rng, 10)};
  VariationalState st = init_state(m, y, flat(4, 0.5), HyperParams::defaults(1, 1));
  st.gamma[0] = {6.0, 2.0};
  for (Index i = 0; i < 4; ++i) st.rho_rate[i] = 1.0 / (i + 1.0);
  for (int it = 0; it < 200; ++it) {
    update_qx(st, m);
    update_w(st, m, y);
  }
  const VecC phy = Qm.leftCols(4).adjoint() * y[0];
  const VecR rho = st.rho_mean();
  for (Index i = 0; i < 4; ++i)
    CHECK(std::abs(st.mu[i] - 3.0 * phy[i] / (3.0 + rho[i])) < 1e-8);
}

TEST_CASE("indistinguishable mixtures leave the prior unchanged") {
  std::mt19937_64 rng(49);
  const Problem p = make_problem(rng, 20, 5, 2, 100.0);
  HyperParams h = HyperParams::defaults(1, 1);
  h.abar = h.a;
  h.bbar = h.b;
  ExtrinsicIn ext{VecR(10)};
  for (Index i = 0; i < 10; ++i) ext.pi[i] = unif(rng, 0.05, 0.95);
  VariationalState st = init_state(p.model, p.y, ext, h);
  update_qx(st, p.model);
  update_rho(st, h);
  update_s(st, h, ext);
  for (Index i = 0; i < 10; ++i) CHECK(st.pi_post[i] == doctest::Approx(ext.pi[i]).epsilon(1e-12));
}
