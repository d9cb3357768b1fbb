#pragma once

// Soft Q-functions of the KL-regularized denoising MDP: the Tweedie
// approximation used at runtime, and exact dynamic-programming tables for
// enumerable discrete instances.

#include <string>
#include <vector>

#include "davlab/continuous.hpp"
#include "davlab/discrete.hpp"
#include "davlab/rewards.hpp"
#include "davlab/tolerances.hpp"

namespace davlab::softq {

struct SoftQConfig {
  double alpha = 0.01;
  double gamma = 1.0;

  void validate() const;
  // γ^{t-1}
  double discount(int t) const;
};

// γ^{t-1} · r(x̂0)
double approx_soft_q(double reward_at_x0hat, int t, const SoftQConfig& cfg);
// Q̂ for the transition into xprev at step t: x̂0 is taken at timestep t-1
// with the prior denoiser.
double approx_soft_q(const cont::ContinuousPolicy& prior, const num::Vec& xprev, int t,
                     const rewards::RewardSpec& reward, const SoftQConfig& cfg);
double approx_soft_q(const disc::DiscretePolicy& prior, const disc::Tokens& xprev, int t,
                     const rewards::RewardSpec& reward, const SoftQConfig& cfg);

// r(x̂0(x_s)) with the relaxed reward; exact reward when x_s has no MASK.
double reward_at_x0hat(const disc::DiscretePolicy& prior, const disc::Tokens& xs, int s,
                       const rewards::RewardSpec& reward);

// V*, Q* and log Z for every state of every timestep. V is indexed by
// state_index; entries at t = 0 that contain MASK are NaN.
class ExactSoftTables {
 public:
  ExactSoftTables(const disc::DiscretePolicy& prior, const rewards::RewardSpec& reward,
                  const SoftQConfig& cfg, std::size_t cap = Tolerances::kEnumerationCap);

  int steps() const { return prior_.steps(); }
  int length() const { return prior_.length(); }
  int vocab() const { return prior_.vocab(); }
  const SoftQConfig& config() const { return cfg_; }
  const disc::DiscretePolicy& prior() const { return prior_; }
  const rewards::RewardSpec& reward() const { return reward_; }

  double V(int t, const disc::Tokens& x) const;
  // Q*(x_t, x_{t-1}) for t >= 1.
  double Q(int t, const disc::Tokens& xt, const disc::Tokens& xprev) const;
  // log Z(x_t) = V*(x_t)/α
  double log_Z(int t, const disc::Tokens& xt) const;

  // Overwrites one V entry; used to build corrupted fixtures.
  void set_V(int t, const disc::Tokens& x, double v);

 private:
  disc::DiscretePolicy prior_;
  rewards::RewardSpec reward_;
  SoftQConfig cfg_;
  std::vector<std::vector<double>> V_;  // [t][state_index]
};

ExactSoftTables exact_soft_tables(const disc::DiscretePolicy& prior, const rewards::RewardSpec& reward,
                                  const SoftQConfig& cfg,
                                  std::size_t cap = Tolerances::kEnumerationCap);

// η*(x_{t-1} | x_t) ∝ p_prior(x_{t-1}|x_t) exp(Q*/α), normalized with the stored Z.
std::vector<disc::Transition> exact_soft_policy(const ExactSoftTables& tables, const disc::Tokens& xt,
                                                int t);

// Largest |V* - α LSE(log p + Q*/α)| over all states with t >= 1, recomputed
// from the prior's transitions.
double bellman_residual(const ExactSoftTables& tables);

enum class BoundMode { exact, monte_carlo };

struct BoundViolation {
  int t = 0;
  disc::Tokens xt;
  disc::Tokens xprev;
  double lower = 0.0;
  double q = 0.0;
  double upper = 0.0;
};

struct BoundReport {
  BoundMode mode = BoundMode::exact;
  int checked = 0;
  bool collapsed = false;  // γ = 1: lower and upper coincide
  double max_gap = 0.0;    // largest upper - lower
  double max_ci = 0.0;     // Monte-Carlo slack used (0 in exact mode)
  std::vector<BoundViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

// Checks αγ log E[exp(γ^{t-2} r/α) | x_{t-1}] <= Q*(x_t, x_{t-1}) <= αγ^{t-1} log E[exp(r/α) | x_{t-1}]
// for every reachable pair with t >= 2. Expectations are over prior rollouts
// from x_{t-1}; Monte-Carlo mode uses `samples` rollouts per state and a
// z·stderr slack through the delta method.
BoundReport check_bounds(const ExactSoftTables& tables, BoundMode mode = BoundMode::exact,
                         int samples = 100000, std::uint64_t seed = 0,
                         double tol = Tolerances::kExactBound);

// E[exp(c·r(x_0)/α) | x_s] in log space for every state at every s, by
// forward enumeration of the prior chain.
std::vector<std::vector<double>> log_prior_moment(const disc::DiscretePolicy& prior,
                                                  const rewards::RewardSpec& reward, double c_over_alpha,
                                                  std::size_t cap = Tolerances::kEnumerationCap);

}  // namespace davlab::softq
