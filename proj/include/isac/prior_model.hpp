#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "isac/common.hpp"

namespace isac {

struct HyperParams {
  double a = 1.0;
  double b = 1.0;
  double abar = 1.0;
  double bbar = 1e-5;
  double c = 1e-6;
  double d = 1e-6;
  VecR lambda_r;  // per grid node
  VecR lambda_c;
  double lambda0_r = 0.5;
  double lambda0_c = 0.5;
  VecR lambda_mb;  // per multi-bounce coefficient
  // i.i.d. variant: activation probability of grid entries per block
  double lambda_iid_r = 0.5;
  double lambda_iid_c = 0.5;

  static HyperParams defaults(int Q, int UV);
  void validate() const;
};

enum Direction : int { kLeft = 0, kRight = 1, kTop = 2, kBottom = 3 };
inline constexpr Direction opposite(Direction d) {
  return static_cast<Direction>(d ^ 1);
}

/// 4-connected H x W grid, column-major node order.
class GridGraph {
 public:
  GridGraph(int H, int W);

  int H() const { return H_; }
  int W() const { return W_; }
  int num_nodes() const { return H_ * W_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  /// Edge endpoints with first < second.
  const std::pair<int, int>& edge(int e) const { return edges_[e]; }
  /// Neighbor of q in direction d, or -1.
  int neighbor(int q, Direction d) const { return nbr_[q][d]; }
  /// Edge joining q to its neighbor in direction d, or -1.
  int edge_at(int q, Direction d) const { return nbr_edge_[q][d]; }
  int degree(int q) const;
  /// Nodes with all four neighbors.
  std::vector<bool> interior_mask() const;
  std::vector<int> interior_nodes() const;

 private:
  int H_;
  int W_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::array<int, 4>> nbr_;
  std::vector<std::array<int, 4>> nbr_edge_;
};

struct MrfParams {
  VecR alpha;  // per node
  VecR beta;   // per edge of the GridGraph

  static MrfParams uniform(const GridGraph& g, double alpha, double beta);
};

/// Sum_q (1/2 Sum_{i in N(q)} beta_iq s_i - alpha_q) s_q, for s in {-1,+1}^Q.
double mrf_unnormalized_logp(const GridGraph& g, const MrfParams& z, std::span<const int> s);

struct BruteForceResult {
  double logZ = 0.0;
  VecR marginals;                          // P(s_q = +1)
  std::vector<Eigen::Matrix2d> pairwise;   // per edge, index [s_p==+1][s_q==+1]
};

inline constexpr int kBruteForceMaxNodes = 20;

/// Exact enumeration; optional evidence adds unary log-odds L_q (factor exp(L_q s_q / 2)).
BruteForceResult brute_force_mrf(const GridGraph& g, const MrfParams& z,
                                 const std::optional<VecR>& evidence_logodds = std::nullopt);

class GibbsSampler {
 public:
  GibbsSampler(const GridGraph& g, const MrfParams& z, std::uint64_t seed);
  void sweep();
  const std::vector<int>& state() const { return s_; }

 private:
  const GridGraph& g_;
  const MrfParams& z_;
  std::mt19937_64 rng_;
  std::vector<int> s_;
};

VecR gibbs_marginals(const GridGraph& g, const MrfParams& z, std::uint64_t seed,
                     int sweeps = 2000, int burn_in = 500);

struct PriorSample {
  std::vector<int> s_bar;
  std::vector<int> s_r;
  std::vector<int> s_c;
  VecR rho_r;
  VecR rho_c;
  VecC x_r;
  VecC x_c;
};

/// Draws (s_bar, s^r, s^c, rho, x) over the grid nodes.
PriorSample sample_three_layer_prior(const HyperParams& h, const GridGraph& g, const MrfParams& z,
                                     std::uint64_t seed, int sweeps = 2000, int burn_in = 500);

}  // namespace isac
