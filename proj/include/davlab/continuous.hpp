#pragma once

// Continuous diffusion world: Gaussian-mixture data, the analytic posterior-mean
// denoiser, and a residual-MLP reverse policy N(μ_θ(x_t,t), σ_t² I).

#include <cstdint>
#include <span>
#include <vector>

#include "davlab/numkit.hpp"
#include "davlab/sched.hpp"
#include "davlab/trajectory.hpp"

namespace davlab::cont {

using num::Mat;
using num::RngStream;
using num::Vec;

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<double> stds;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  std::size_t components() const { return weights.size(); }
  void validate() const;
  Vec sample(RngStream& rng) const;
  Vec mean() const;
};

// Draws x_t ~ q(x_t | x_0) = N(√ᾱ_t x_0, (1-ᾱ_t) I).
Vec forward_marginal_sample(const Vec& x0, int t, const sched::ContinuousSchedule& schedule,
                            RngStream& rng);

// E[x_0 | x_t] under the mixture. t = 0 returns x_t.
Vec analytic_x0hat(const Vec& xt, int t, const GaussianMixture& mixture,
                   const sched::ContinuousSchedule& schedule);

// Jᵀ·cotangent where J = ∂x̂0/∂x_t.
Vec x0hat_vjp(const Vec& xt, int t, const GaussianMixture& mixture,
              const sched::ContinuousSchedule& schedule, const Vec& cotangent);

// Trace of Var[x_0 | x_t] divided by the dimension.
double x0_posterior_variance(const Vec& xt, int t, const GaussianMixture& mixture,
                             const sched::ContinuousSchedule& schedule);

enum class VarianceMode {
  ddpm_posterior,  // σ_t² from the schedule
  analytic,        // β̃_t + c_t² E[Var(x_0|x_t)]/d, the best isotropic Gaussian kernel
};

class ContinuousPolicy {
 public:
  ContinuousPolicy() = default;
  // residual maps (x_t, t/T) ∈ R^{d+1} to R^d.
  ContinuousPolicy(sched::ContinuousSchedule schedule, GaussianMixture mixture, num::Mlp residual,
                   VarianceMode variance = VarianceMode::analytic);

  int dim() const { return mixture_.dim(); }
  int steps() const { return schedule_.steps(); }
  const sched::ContinuousSchedule& schedule() const { return schedule_; }
  const GaussianMixture& mixture() const { return mixture_; }
  const num::Mlp& residual() const { return residual_; }
  VarianceMode variance_mode() const { return variance_; }

  std::vector<double>& params() { return residual_.params(); }
  const std::vector<double>& params() const { return residual_.params(); }

  bool frozen = false;
  std::uint64_t version = 0;

  Vec x0hat(const Vec& xt, int t) const;
  Vec analytic_mean(const Vec& xt, int t) const;
  Vec residual_output(const Vec& xt, int t) const;
  Vec mean(const Vec& xt, int t) const;
  double sigma2(int t) const;

  double logprob(const Vec& xt, const Vec& xprev, int t) const;
  // grad += scale · ∇_θ log p_θ(xprev | xt)
  void logprob_grad(const Vec& xt, const Vec& xprev, int t, std::span<double> grad,
                    double scale = 1.0) const;
  // grad += scale · ∇_θ of the residual for upstream dL/dμ
  void mean_vjp(const Vec& xt, int t, const Vec& upstream, std::span<double> grad,
                double scale = 1.0) const;

  Vec sample_initial(RngStream& rng) const;
  Vec sample_step(const Vec& xt, int t, RngStream& rng) const;

 private:
  Vec residual_input(const Vec& xt, int t) const;

  sched::ContinuousSchedule schedule_;
  GaussianMixture mixture_;
  num::Mlp residual_;
  VarianceMode variance_ = VarianceMode::analytic;
  std::vector<double> sigma2_;  // index 1..T
};

Vec policy_mean(const ContinuousPolicy& policy, const Vec& xt, int t);
double policy_logprob(const ContinuousPolicy& policy, const Vec& xt, const Vec& xprev, int t);

// Gaussian log density of x under N(mean, var I).
double gaussian_logpdf(const Vec& x, const Vec& mean, double var);

// Ancestral samples; trajectory b uses rng.split(b).
std::vector<Trajectory<Vec>> rollout(const ContinuousPolicy& policy, const RngStream& rng, int n);

// Residual MLP for a d-dimensional world with zeroed output layer.
num::Mlp make_residual(int dim, const std::vector<std::size_t>& hidden, num::Activation act,
                       RngStream& rng);

}  // namespace davlab::cont
