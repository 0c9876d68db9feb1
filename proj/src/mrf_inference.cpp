#include "isac/mrf_inference.hpp"

#include <algorithm>
#include <cmath>

namespace isac {

namespace {

double clip_lo(double l) {
  const double m = max_logodds();
  if (std::isnan(l)) return 0.0;
  return std::clamp(l, -m, m);
}

double logaddexp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Pairwise factor exp(beta s_n s_q) applied to a cavity log-odds e of s_n.
double pair_message(double beta, double e) {
  const double h = 0.5 * e;
  return clip_lo(logaddexp(beta + h, -beta - h) - logaddexp(-beta + h, beta - h));
}

// Sorting makes the sum independent of which direction holds which value.
template <std::size_t N>
double sum_sorted(std::array<double, N> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double max_logodds() {
  static const double m = logit(1.0 - kProbFloor);
  return m;
}

MrfMessages::MrfMessages(int Q)
    : in_r(VecR::Zero(Q)),
      in_c(VecR::Zero(Q)),
      kappa{VecR::Zero(Q), VecR::Zero(Q), VecR::Zero(Q), VecR::Zero(Q)},
      out_r(VecR::Zero(Q)),
      out_c(VecR::Zero(Q)),
      joint(VecR::Zero(Q)) {}

double inbound_prob(double pi_in, double lambda) {
  const double p = clip_prob(pi_in);
  return 1.0 / (1.0 + (1.0 - p) / (1.0 + 2.0 * lambda * p - lambda - p));
}

VecR inbound(const VecR& pi_in, const VecR& lambda) {
  if (pi_in.size() != lambda.size()) throw ConfigError("inbound: length mismatch");
  VecR out(pi_in.size());
  for (Index q = 0; q < out.size(); ++q) {
    const double p = clip_prob(pi_in[q]);
    const double l = lambda[q];
    // ln[(lambda p + (1 - lambda)(1 - p)) / (1 - p)]
    out[q] = clip_lo(std::log(l * p + (1.0 - l) * (1.0 - p)) - std::log1p(-p));
  }
  return out;
}

void propagate_spatial(const GridGraph& g, const MrfParams& z, MrfMessages& m, int rounds) {
  const int H = g.H();
  const int W = g.W();
  const int Q = g.num_nodes();
  if (z.alpha.size() != Q || z.beta.size() != g.num_edges() || m.in_r.size() != Q)
    throw ConfigError("propagate_spatial: size mismatch");

  // cavity field of node n excluding the message that arrived from direction `skip`
  auto cavity = [&](int n, Direction skip, const std::array<VecR, 4>& old, Direction fresh) {
    std::array<double, 3> k{};
    int j = 0;
    for (int d = 0; d < 4; ++d) {
      if (d == skip) continue;
      k[j++] = d == fresh ? m.kappa[d][n] : old[d][n];
    }
    return (m.in_r[n] + m.in_c[n]) - 2.0 * z.alpha[n] + sum_sorted(k);
  };

  for (int round = 0; round < rounds; ++round) {
    const std::array<VecR, 4> old = m.kappa;
    // message into q from its left neighbor n = q - H; n's cavity excludes its right input
    for (int c = 1; c < W; ++c)
      for (int r = 0; r < H; ++r) {
        const int q = c * H + r;
        const int n = q - H;
        m.kappa[kLeft][q] = pair_message(z.beta[g.edge_at(q, kLeft)], cavity(n, kRight, old, kLeft));
      }
    for (int c = W - 2; c >= 0; --c)
      for (int r = 0; r < H; ++r) {
        const int q = c * H + r;
        const int n = q + H;
        m.kappa[kRight][q] = pair_message(z.beta[g.edge_at(q, kRight)], cavity(n, kLeft, old, kRight));
      }
    for (int r = 1; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const int q = c * H + r;
        const int n = q - 1;
        m.kappa[kTop][q] = pair_message(z.beta[g.edge_at(q, kTop)], cavity(n, kBottom, old, kTop));
      }
    for (int r = H - 2; r >= 0; --r)
      for (int c = 0; c < W; ++c) {
        const int q = c * H + r;
        const int n = q + 1;
        m.kappa[kBottom][q] =
            pair_message(z.beta[g.edge_at(q, kBottom)], cavity(n, kTop, old, kBottom));
      }
  }
}

SupportPriors outbound_and_joint(const GridGraph& g, const MrfParams& z, MrfMessages& m,
                                 const VecR& lambda_r, const VecR& lambda_c) {
  const int Q = g.num_nodes();
  if (lambda_r.size() != Q || lambda_c.size() != Q) throw ConfigError("outbound: size mismatch");
  SupportPriors out{VecR(Q), VecR(Q), VecR(Q)};
  for (int q = 0; q < Q; ++q) {
    const double k = sum_sorted(std::array<double, 4>{m.kappa[0][q], m.kappa[1][q],
                                                      m.kappa[2][q], m.kappa[3][q]});
    const double base = -2.0 * z.alpha[q] + k;
    m.out_r[q] = clip_lo(base + m.in_c[q]);
    m.out_c[q] = clip_lo(base + m.in_r[q]);
    m.joint[q] = clip_lo((m.in_r[q] + m.in_c[q]) - 2.0 * z.alpha[q] + k);
    out.pi_r[q] = clip_prob(lambda_r[q] * sigmoid(m.out_r[q]));
    out.pi_c[q] = clip_prob(lambda_c[q] * sigmoid(m.out_c[q]));
    out.joint[q] = sigmoid(m.joint[q]);
  }
  return out;
}

SupportPriors run_module_b(const GridGraph& g, const MrfParams& z, const VecR& pi_r_in,
                           const VecR& pi_c_in, const VecR& lambda_r, const VecR& lambda_c,
                           int rounds, MrfMessages* keep) {
  MrfMessages m(g.num_nodes());
  m.in_r = inbound(pi_r_in, lambda_r);
  m.in_c = inbound(pi_c_in, lambda_c);
  propagate_spatial(g, z, m, rounds);
  SupportPriors out = outbound_and_joint(g, z, m, lambda_r, lambda_c);
  if (keep) *keep = std::move(m);
  return out;
}

}  // namespace isac
