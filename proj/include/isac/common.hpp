#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace isac {

using cd = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;
using VecR = Eigen::VectorXd;
using MatR = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299'792'458.0;

/// Raised when an input lies outside the domain of a geometric or
/// probabilistic map (coincident points, out-of-range sizes).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric guard tripped (nonpositive precision, non-finite value).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Probabilities exchanged between modules are kept away from {0, 1}.
inline constexpr double kProbFloor = 1e-12;

inline double clip_prob(double p) {
  if (!(p > kProbFloor)) return kProbFloor;  // also catches NaN
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double sigmoid(double l) {
  if (l >= 0) return 1.0 / (1.0 + std::exp(-l));
  const double e = std::exp(l);
  return e / (1.0 + e);
}

/// Independent child seed for a named random stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace isac
