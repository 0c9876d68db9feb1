#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace isac {

struct VerifyOptions {
  std::uint64_t seed = 2024;
  int trials = 100;  // Monte Carlo trials per point of the ordering checks
  std::string work_dir = "verify-work";
  int workers = -1;
  bool resume = false;  // keep finished sweep cells from an earlier run
  std::function<void(const std::string&)> log;
};

struct CriterionReport {
  int id = 0;
  std::string title;
  bool pass = false;
  std::vector<std::string> details;
  double seconds = 0.0;
};

inline constexpr int kNumCriteria = 8;

/// 1: sum-product vs enumeration on chains and a loopy 3x3 grid.
CriterionReport check_mrf_oracle(const VerifyOptions& opt);
/// 2: fixed point of the inverse-free q(x) update vs the exact posterior mean.
CriterionReport check_inverse_free(const VerifyOptions& opt);
/// 3: relaxed ELBO never exceeds the exact one; g(x, x) is the exact quadratic.
CriterionReport check_bound(const VerifyOptions& opt);
/// 4: monotone inner ELBO and monotone Armijo steps over full runs.
CriterionReport check_monotonicity(const VerifyOptions& opt);
/// 5: analytic gradients vs central differences.
CriterionReport check_gradients(const VerifyOptions& opt);
/// 6: per-iteration timing table against the dense posterior.
CriterionReport check_complexity(const VerifyOptions& opt);
/// 7: qualitative orderings over desk-scale sweeps.
CriterionReport check_orderings(const VerifyOptions& opt);
/// 8: noiseless on-grid recovery.
CriterionReport check_exact_recovery(const VerifyOptions& opt);

CriterionReport run_criterion(int id, const VerifyOptions& opt);

/// "criterion N: PASS|FAIL  title (seconds)".
std::string summary_line(const CriterionReport& r);

}  // namespace isac
