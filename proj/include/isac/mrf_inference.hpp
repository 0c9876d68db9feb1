#pragma once

#include <array>

#include "isac/prior_model.hpp"

namespace isac {

/// Largest log-odds magnitude a message may carry (probability 1 - 1e-12).
double max_logodds();

/// Module B state; everything is stored as log-odds ln(p / (1 - p)).
struct MrfMessages {
  VecR in_r;                   // support s^r -> s_bar
  VecR in_c;                   // support s^c -> s_bar
  std::array<VecR, 4> kappa;   // spatial input of q from its neighbor in each direction
  VecR out_r;                  // s_bar -> support s^r
  VecR out_c;
  VecR joint;                  // approximate q(s_bar = 1)

  explicit MrfMessages(int Q = 0);
  double kappa_prob(Direction d, int q) const { return sigmoid(kappa[d][q]); }
};

/// Message from the support factor to s_bar, as log-odds, per node.
VecR inbound(const VecR& pi_in, const VecR& lambda);
double inbound_prob(double pi_in, double lambda);

/// Spatial sum-product. Each round runs four directional sweeps (left-to-right,
/// right-to-left, top-to-bottom, bottom-to-top); a sweep updates its own direction in
/// place and reads the other directions from the start of the round.
void propagate_spatial(const GridGraph& g, const MrfParams& z, MrfMessages& m, int rounds = 4);

struct SupportPriors {
  VecR pi_r;   // lambda^r_q * P(s_bar -> s^r)
  VecR pi_c;
  VecR joint;  // P(s_bar_q = 1)
};

SupportPriors outbound_and_joint(const GridGraph& g, const MrfParams& z, MrfMessages& m,
                                 const VecR& lambda_r, const VecR& lambda_c);

/// inbound -> propagate_spatial -> outbound_and_joint.
SupportPriors run_module_b(const GridGraph& g, const MrfParams& z, const VecR& pi_r_in,
                           const VecR& pi_c_in, const VecR& lambda_r, const VecR& lambda_c,
                           int rounds = 4, MrfMessages* keep = nullptr);

}  // namespace isac
