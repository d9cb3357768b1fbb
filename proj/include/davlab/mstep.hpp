#pragma once

// Amortization: maximum likelihood on E-step trajectories, optionally anchored
// to the pretrained policy by a per-step KL penalty.

#include <cstdint>
#include <optional>
#include <vector>

#include "davlab/continuous.hpp"
#include "davlab/discrete.hpp"
#include "davlab/trajectory.hpp"

namespace davlab::mstep {

struct MStepConfig {
  double lr = 1e-3;
  int steps = 1;
  double lambda = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Weight the KL at step t by γ^{T-t} instead of uniformly.
  bool kl_gamma_weighted = false;
  double gamma = 1.0;

  void validate() const;
  num::AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
};

using ContinuousBatch = std::vector<Trajectory<num::Vec>>;
using DiscreteBatch = std::vector<Trajectory<disc::SeqState>>;

// -Σ_b w_b Σ_t log p_θ(x_{t-1}|x_t) with w_b = 1/B unless weights are given.
LossResult dav_loss(const cont::ContinuousPolicy& policy, const ContinuousBatch& batch,
                    const std::vector<double>* weights = nullptr);
LossResult dav_loss(const disc::DiscretePolicy& policy, const DiscreteBatch& batch,
                    const std::vector<double>* weights = nullptr);

// dav_loss + λ Σ_b w_b Σ_t κ_t KL(p_θ(·|x_t) ‖ p_θ0(·|x_t)).
LossResult dav_kl_loss(const cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor,
                       const ContinuousBatch& batch, const MStepConfig& cfg,
                       const std::vector<double>* weights = nullptr);
LossResult dav_kl_loss(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor,
                       const DiscreteBatch& batch, const MStepConfig& cfg,
                       const std::vector<double>* weights = nullptr);

// Closed-form per-step KLs.
double step_kl(const cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor,
               const num::Vec& xt, int t);
double step_kl(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor,
               const disc::Tokens& xt, int t);

struct StepReport {
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> losses;  // loss at the start of every optimizer step
  int steps = 0;
};

// cfg.steps Adam steps on the configured loss. Trajectories whose snapshot tag
// differs from expected_snapshot are rejected. A non-finite loss or gradient
// throws NumericError and leaves the parameters untouched for that step.
StepReport mstep_update(cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor,
                        const ContinuousBatch& batch, const MStepConfig& cfg, num::Adam& opt,
                        std::optional<std::uint64_t> expected_snapshot,
                        const std::vector<double>* weights = nullptr);
StepReport mstep_update(disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor,
                        const DiscreteBatch& batch, const MStepConfig& cfg, num::Adam& opt,
                        std::optional<std::uint64_t> expected_snapshot,
                        const std::vector<double>* weights = nullptr);

}  // namespace davlab::mstep
