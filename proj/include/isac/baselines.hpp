#pragma once

#include <optional>
#include <string>
#include <vector>

#include "isac/turbo.hpp"

namespace isac {

struct OmpOptions {
  int max_atoms = -1;            // -1: no explicit cap beyond the column count
  double residual_tol_sq = 0.0;  // stop once ||r||^2 <= this
};

struct OmpResult {
  std::vector<Index> support;  // selection order
  VecC coefficients;           // aligned with support
  VecC residual;
};

/// Greedy orthogonal matching pursuit (columns normalized internally).
OmpResult omp_solve(const VecC& y, const MatC& phi, const OmpOptions& opt);

struct ExactPosterior {
  VecC mu;
  MatC sigma;
};

/// Sigma = (gamma Phi^H Phi + diag(rho))^-1, mu = gamma Sigma Phi^H y.
ExactPosterior exact_qx(const VecC& y, const MatC& phi, double gamma, const VecR& rho,
                        Index dense_cap = 4000);

/// Non-relaxed q(x) step on every block of the model.
void exact_update_qx(VariationalState& st, const MeasurementModel& model,
                     const std::vector<VecC>& y, Index dense_cap = 4000);

/// ELBO with the full covariance kept by exact_update_qx.
double exact_elbo_full(const VariationalState& st, const MeasurementModel& model,
                       const std::vector<VecC>& y, const HyperParams& hyper,
                       const ExtrinsicIn& ext);

struct VariantInputs {
  const ModelBuilder* builder = nullptr;
  Observation obs;
  HyperParams hyper;
  ThetaPrior prior;
  EstimatorConfig cfg;
  std::optional<GenieInfo> genie;
  // OMP stopping: expected noise energy per block (||z_b||^2 expectation)
  double noise_energy_r = 0.0;
  double noise_energy_c = 0.0;
};

/// Fixed-grid OMP on each block; reported through the common result type.
EstimateResult run_omp(const VariantInputs& in);

/// Dispatch on "mrf", "iid", "genie", "non_relaxed" or "omp".
EstimateResult run_variant(const std::string& tag, const VariantInputs& in);

}  // namespace isac
