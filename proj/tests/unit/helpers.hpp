#pragma once

#include <random>

#include "isac/common.hpp"

namespace testutil {

inline isac::MatC randn(std::mt19937_64& rng, isac::Index r, isac::Index c) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  isac::MatC m(r, c);
  for (isac::Index j = 0; j < c; ++j)
    for (isac::Index i = 0; i < r; ++i) m(i, j) = {n(rng), n(rng)};
  return m;
}

inline isac::VecC randn_vec(std::mt19937_64& rng, isac::Index n) { return randn(rng, n, 1).col(0); }

inline double unif(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

}  // namespace testutil
