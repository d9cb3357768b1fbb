#pragma once

#include <cstddef>

namespace davlab {

// Every numeric tolerance used by library code lives here.
struct Tolerances {
  // sample_categorical accepts probability vectors whose sum is within this of 1.
  static constexpr double kProbSum = 1e-9;
  // GaussianMixture weights must sum to 1 within this.
  static constexpr double kMixtureWeights = 1e-12;
  // Soft-Bellman substitution check.
  static constexpr double kBellman = 1e-10;
  // Slack applied to bound checks whose expectations are computed exactly.
  static constexpr double kExactBound = 1e-9;
  // z-score used for Monte-Carlo confidence slack.
  static constexpr double kMonteCarloZ = 3.0;
  // Default cap on (K+1)^L for exact enumeration.
  static constexpr std::size_t kEnumerationCap = 20000;
  // Probability floor used when a log of an exact zero would otherwise be taken.
  static constexpr double kLogFloor = 1e-300;
};

}  // namespace davlab
