#pragma once

// Metrics: the discounted ELBO J_{α,γ} (exact on enumerable instances,
// importance-sampled otherwise), reward statistics, diversity and coverage.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "davlab/continuous.hpp"
#include "davlab/discrete.hpp"
#include "davlab/rewards.hpp"
#include "davlab/softq.hpp"
#include "davlab/trajectory.hpp"

namespace davlab::eval {

enum class Estimator { exact_tabular, surrogate_is };
std::string to_string(Estimator e);

struct ElboRecord {
  int epoch = 0;
  double elbo = 0.0;  // per trajectory
  Estimator estimator = Estimator::surrogate_is;
  int samples = 0;    // 0 for exact estimates
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double diversity = std::numeric_limits<double>::quiet_NaN();
  double mode_coverage = std::numeric_limits<double>::quiet_NaN();
  double posterior_mean_reward = 0.0;
  double weight_entropy = 0.0;
  int fallback_count = 0;
  double loss_before = std::numeric_limits<double>::quiet_NaN();
  double loss_after = std::numeric_limits<double>::quiet_NaN();
};

// log p(x_{t-1} | x_t) for the policy being scored; may throw UnreachableTransition.
using LogPolicy = std::function<double(const disc::Tokens& xt, int t, const disc::Tokens& xprev)>;

// E_η[Σ_t γ^{T-t}(r_t/α + log p - log η)] with η the exact soft policy of
// `tables`, by forward dynamic programming over the η chain.
double elbo_exact_tabular(const LogPolicy& log_p, const softq::ExactSoftTables& tables);
double elbo_exact_tabular(const disc::DiscretePolicy& policy, const softq::ExactSoftTables& tables);

// Undiscounted J_α by enumerating complete trajectories.
double elbo_trajectory_enumeration(const disc::DiscretePolicy& policy, const softq::ExactSoftTables& tables);

// Mean over the batch of Σ_t γ^{T-t}(r_t/α + log p_θ - log η̂ - log(M w̃)).
double elbo_surrogate(const cont::ContinuousPolicy& policy, const std::vector<Trajectory<num::Vec>>& batch,
                      const softq::SoftQConfig& cfg);
double elbo_surrogate(const disc::DiscretePolicy& policy,
                      const std::vector<Trajectory<disc::SeqState>>& batch, const softq::SoftQConfig& cfg);

int levenshtein(const disc::Tokens& a, const disc::Tokens& b);

// Mean pairwise distance (Levenshtein or Euclidean).
double diversity(const std::vector<disc::Tokens>& samples);
double diversity(const std::vector<num::Vec>& samples);

// Fraction of components with at least one sample within radius of their mean.
double mode_coverage(const std::vector<num::Vec>& samples, const cont::GaussianMixture& mixture,
                     double radius);

struct RewardStats {
  double mean = 0.0;
  double std = 0.0;
};
RewardStats reward_stats(const std::vector<double>& rewards);

}  // namespace davlab::eval
