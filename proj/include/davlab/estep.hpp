#pragma once

// Posterior exploration: soft-Q guided proposals, importance weights and
// single-particle resampling at every denoising step.

#include <cstdint>
#include <vector>

#include "davlab/continuous.hpp"
#include "davlab/discrete.hpp"
#include "davlab/rewards.hpp"
#include "davlab/softq.hpp"
#include "davlab/trajectory.hpp"

namespace davlab::estep {

using num::RngStream;
using num::Vec;

struct EStepConfig {
  softq::SoftQConfig soft;
  int particles = 4;
  bool guidance = true;
  // Continuous only: use ∇r(x̂0) in place of the chain rule through x̂0.
  bool stop_grad_x0hat = false;

  // guidance requires a differentiable reward
  void validate(const rewards::RewardSpec& reward) const;
};

template <class State>
struct ParticleSet {
  std::vector<State> states;
  std::vector<double> log_proposal;
  std::vector<double> log_prior;
  std::vector<double> q_hat;
  std::vector<double> log_weights;  // normalized
  std::vector<double> weights;

  std::size_t size() const { return states.size(); }
  double weight_entropy() const;
};

using ContinuousParticles = ParticleSet<Vec>;
using DiscreteParticles = ParticleSet<disc::Tokens>;

// Guided Gaussian proposal N(mean, var I) around the prior mean.
struct GaussianProposal {
  Vec prior_mean;
  Vec mean;
  double var = 0.0;
};

// ∇_{x_t} r(x̂0(x_t)) through the analytic denoiser.
Vec guidance_gradient(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                      const rewards::RewardSpec& reward, bool stop_grad_x0hat);
GaussianProposal continuous_proposal(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                                     const rewards::RewardSpec& reward, const EStepConfig& cfg);

// Per-position guidance over {tokens, MASK}: token i scores ∂r/∂p_ℓ[i] and
// MASK scores Σ_i x̂0_ℓ[i] ∂r/∂p_ℓ[i].
num::Mat discrete_guidance(const disc::DiscretePolicy& guide, const disc::Tokens& xt, int t,
                           const rewards::RewardSpec& reward);
// L x (K+1) proposal log probabilities. Guidance touches only masked positions.
num::Mat discrete_proposal_log_probs(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                                     const disc::Tokens& xt, int t, const rewards::RewardSpec& reward,
                                     const EStepConfig& cfg);

ContinuousParticles propose_continuous(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                                       const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                       RngStream& rng);
// policy supplies p_θk; guide supplies x̂0 for guidance and Q̂.
DiscreteParticles propose_discrete(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                                   const disc::Tokens& xt, int t, const rewards::RewardSpec& reward,
                                   const EStepConfig& cfg, RngStream& rng);

// log w = log p - log η̂ + Q̂/α, normalized in log space. Throws DegenerateWeights
// when every weight is zero.
template <class State>
void importance_weights(ParticleSet<State>& particles, const EStepConfig& cfg, int t);

template <class State>
std::size_t resample(const ParticleSet<State>& particles, RngStream& rng);

Trajectory<Vec> sample_posterior_trajectory(const cont::ContinuousPolicy& policy,
                                            const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                            RngStream& rng);
Trajectory<disc::SeqState> sample_posterior_trajectory(const disc::DiscretePolicy& policy,
                                                       const disc::DiscretePolicy& guide,
                                                       const rewards::RewardSpec& reward,
                                                       const EStepConfig& cfg, RngStream& rng);

// B posterior trajectories; trajectory b uses rng.split(b).
std::vector<Trajectory<Vec>> estep_batch(const cont::ContinuousPolicy& policy,
                                         const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                         const RngStream& rng, int B);
std::vector<Trajectory<disc::SeqState>> estep_batch(const disc::DiscretePolicy& policy,
                                                    const disc::DiscretePolicy& guide,
                                                    const rewards::RewardSpec& reward,
                                                    const EStepConfig& cfg, const RngStream& rng, int B);

}  // namespace davlab::estep
