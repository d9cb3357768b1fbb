#include "davlab/estep.hpp"

#include <cmath>
#include <limits>

#include "davlab/errors.hpp"
#include "davlab/parallel.hpp"

namespace davlab::estep {

void EStepConfig::validate(const rewards::RewardSpec& reward) const {
  soft.validate();
  if (particles < 1) throw ConfigError("E-step: particle count M must be >= 1");
  if (guidance && !reward.differentiable) {
    throw ConfigError("E-step: guidance requires a differentiable reward ('" + reward.name + "' is black-box)");
  }
}

template <class State>
double ParticleSet<State>::weight_entropy() const {
  double h = 0.0;
  for (double w : weights) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

template struct ParticleSet<Vec>;
template struct ParticleSet<disc::Tokens>;

// ---------------------------------------------------------------------------
// Continuous proposal

Vec guidance_gradient(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                      const rewards::RewardSpec& reward, bool stop_grad_x0hat) {
  const Vec xh = policy.x0hat(xt, t);
  const Vec g = rewards::reward_grad(reward, xh);
  if (stop_grad_x0hat) return g;
  return cont::x0hat_vjp(xt, t, policy.mixture(), policy.schedule(), g);
}

GaussianProposal continuous_proposal(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                                     const rewards::RewardSpec& reward, const EStepConfig& cfg) {
  GaussianProposal p;
  p.prior_mean = policy.mean(xt, t);
  p.var = policy.sigma2(t);
  p.mean = p.prior_mean;
  if (cfg.guidance) {
    const Vec g = guidance_gradient(policy, xt, t, reward, cfg.stop_grad_x0hat);
    p.mean.axpy(p.var / cfg.soft.alpha * cfg.soft.discount(t), g);
  }
  return p;
}

ContinuousParticles propose_continuous(const cont::ContinuousPolicy& policy, const Vec& xt, int t,
                                       const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                       RngStream& rng) {
  if (cfg.guidance && !reward.differentiable) {
    throw ConfigError("propose_continuous: guidance on with a black-box reward");
  }
  const GaussianProposal prop = continuous_proposal(policy, xt, t, reward, cfg);
  const double sd = std::sqrt(prop.var);
  const auto M = static_cast<std::size_t>(cfg.particles);
  ContinuousParticles ps;
  ps.states.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    Vec x = prop.mean;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += sd * rng.normal();
    ps.log_proposal.push_back(cont::gaussian_logpdf(x, prop.mean, prop.var));
    ps.log_prior.push_back(cont::gaussian_logpdf(x, prop.prior_mean, prop.var));
    ps.q_hat.push_back(softq::approx_soft_q(policy, x, t, reward, cfg.soft));
    ps.states.push_back(std::move(x));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Discrete proposal

num::Mat discrete_guidance(const disc::DiscretePolicy& guide, const disc::Tokens& xt, int t,
                           const rewards::RewardSpec& reward) {
  const num::Mat xh = guide.denoiser().probs(xt, t);
  const num::Mat g = rewards::relaxed_reward_grad(reward, rewards::with_mask_column(xh));
  const std::size_t K = xh.cols();
  num::Mat h(xt.size(), K + 1);
  for (std::size_t l = 0; l < xt.size(); ++l) {
    double mask_score = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      h(l, k) = g(l, k);
      mask_score += xh(l, k) * g(l, k);
    }
    h(l, K) = mask_score;
  }
  return h;
}

num::Mat discrete_proposal_log_probs(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                                     const disc::Tokens& xt, int t, const rewards::RewardSpec& reward,
                                     const EStepConfig& cfg) {
  num::Mat lp = policy.step_log_probs(xt, t - 1, t);
  if (!cfg.guidance) return lp;
  if (!reward.differentiable) throw ConfigError("propose_discrete: guidance on with a black-box reward");
  const num::Mat h = discrete_guidance(guide, xt, t, reward);
  const double coef = cfg.soft.discount(t) / cfg.soft.alpha;
  const std::size_t C = lp.cols();
  Vec row(C);
  for (std::size_t l = 0; l < xt.size(); ++l) {
    if (xt[l] != disc::kMask) continue;
    bool zero = true;
    for (std::size_t k = 0; k < C; ++k) zero &= h(l, k) == 0.0;
    if (zero) continue;
    for (std::size_t k = 0; k < C; ++k) row[k] = lp(l, k) + coef * h(l, k);
    const Vec norm = num::log_softmax(row.span());
    for (std::size_t k = 0; k < C; ++k) lp(l, k) = norm[k];
  }
  return lp;
}

DiscreteParticles propose_discrete(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                                   const disc::Tokens& xt, int t, const rewards::RewardSpec& reward,
                                   const EStepConfig& cfg, RngStream& rng) {
  const num::Mat prior_lp = policy.step_log_probs(xt, t - 1, t);
  const num::Mat prop_lp = discrete_proposal_log_probs(policy, guide, xt, t, reward, cfg);
  num::Mat prop_p(prop_lp.rows(), prop_lp.cols());
  for (std::size_t i = 0; i < prop_lp.flat().size(); ++i) prop_p.flat()[i] = std::exp(prop_lp.flat()[i]);
  const auto M = static_cast<std::size_t>(cfg.particles);
  DiscreteParticles ps;
  ps.states.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    disc::Tokens x = disc::sample_positions(prop_p, rng);
    ps.log_proposal.push_back(disc::positions_log_prob(prop_lp, x));
    ps.log_prior.push_back(disc::positions_log_prob(prior_lp, x));
    ps.q_hat.push_back(softq::approx_soft_q(guide, x, t, reward, cfg.soft));
    ps.states.push_back(std::move(x));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Weights and resampling

template <class State>
void importance_weights(ParticleSet<State>& ps, const EStepConfig& cfg, int t) {
  (void)t;
  const std::size_t M = ps.size();
  if (ps.log_prior.size() != M || ps.log_proposal.size() != M || ps.q_hat.size() != M) {
    throw DomainError("importance_weights: particle arrays differ in length");
  }
  if (M == 0) throw DomainError("importance_weights: empty particle set");
  std::vector<double> lw(M);
  bool any = false;
  for (std::size_t m = 0; m < M; ++m) {
    const double ratio = ps.log_prior[m] - ps.log_proposal[m];
    lw[m] = ratio + ps.q_hat[m] / cfg.soft.alpha;
    if (std::isnan(lw[m])) lw[m] = -std::numeric_limits<double>::infinity();
    any |= std::isfinite(lw[m]);
  }
  if (!any) throw DegenerateWeights("importance_weights: every particle has zero weight");
  const double lse = num::log_sum_exp(lw);
  ps.log_weights.resize(M);
  ps.weights.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    ps.log_weights[m] = lw[m] - lse;
    ps.weights[m] = std::exp(ps.log_weights[m]);
  }
}

template <class State>
std::size_t resample(const ParticleSet<State>& ps, RngStream& rng) {
  if (ps.weights.size() != ps.size() || ps.size() == 0) throw DomainError("resample: weights not set");
  if (ps.size() == 1) return 0;
  return num::sample_categorical(ps.weights, rng);
}

template void importance_weights<Vec>(ContinuousParticles&, const EStepConfig&, int);
template void importance_weights<disc::Tokens>(DiscreteParticles&, const EStepConfig&, int);
template std::size_t resample<Vec>(const ContinuousParticles&, RngStream&);
template std::size_t resample<disc::Tokens>(const DiscreteParticles&, RngStream&);

namespace {

template <class State>
StepRecord select(ParticleSet<State>& ps, const EStepConfig& cfg, int t, RngStream& rng, State& out) {
  StepRecord rec;
  rec.t = t;
  rec.particles = static_cast<int>(ps.size());
  try {
    importance_weights(ps, cfg, t);
  } catch (const DegenerateWeights&) {
    const double u = 1.0 / static_cast<double>(ps.size());
    ps.weights.assign(ps.size(), u);
    ps.log_weights.assign(ps.size(), std::log(u));
    rec.fallback = true;
  }
  const std::size_t k = resample(ps, rng);
  rec.log_prior = ps.log_prior[k];
  rec.log_proposal = ps.log_proposal[k];
  rec.log_weight = ps.log_weights[k];
  rec.q_hat = ps.q_hat[k];
  rec.weight_entropy = ps.weight_entropy();
  out = std::move(ps.states[k]);
  return rec;
}

}  // namespace

Trajectory<Vec> sample_posterior_trajectory(const cont::ContinuousPolicy& policy,
                                            const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                            RngStream& rng) {
  cfg.validate(reward);
  Trajectory<Vec> tr;
  tr.snapshot = policy.version;
  tr.states.push_back(policy.sample_initial(rng));
  for (int t = policy.steps(); t >= 1; --t) {
    auto ps = propose_continuous(policy, tr.states.back(), t, reward, cfg, rng);
    Vec next;
    tr.steps.push_back(select(ps, cfg, t, rng, next));
    tr.states.push_back(std::move(next));
  }
  tr.reward = rewards::reward_value(reward, tr.terminal());
  return tr;
}

Trajectory<disc::SeqState> sample_posterior_trajectory(const disc::DiscretePolicy& policy,
                                                       const disc::DiscretePolicy& guide,
                                                       const rewards::RewardSpec& reward,
                                                       const EStepConfig& cfg, RngStream& rng) {
  cfg.validate(reward);
  Trajectory<disc::SeqState> tr;
  tr.snapshot = policy.version;
  tr.states.push_back(policy.initial_state());
  for (int t = policy.steps(); t >= 1; --t) {
    auto ps = propose_discrete(policy, guide, tr.states.back().tokens, t, reward, cfg, rng);
    disc::Tokens next;
    tr.steps.push_back(select(ps, cfg, t, rng, next));
    tr.states.push_back(disc::SeqState{std::move(next), t - 1});
  }
  tr.reward = rewards::reward_value(reward, tr.terminal().tokens);
  return tr;
}

std::vector<Trajectory<Vec>> estep_batch(const cont::ContinuousPolicy& policy,
                                         const rewards::RewardSpec& reward, const EStepConfig& cfg,
                                         const RngStream& rng, int B) {
  if (B < 1) throw ConfigError("E-step batch size must be >= 1");
  cfg.validate(reward);
  std::vector<Trajectory<Vec>> out(static_cast<std::size_t>(B));
  parallel_for(out.size(), [&](std::size_t b) {
    RngStream r = rng.split(b);
    out[b] = sample_posterior_trajectory(policy, reward, cfg, r);
  });
  return out;
}

std::vector<Trajectory<disc::SeqState>> estep_batch(const disc::DiscretePolicy& policy,
                                                    const disc::DiscretePolicy& guide,
                                                    const rewards::RewardSpec& reward,
                                                    const EStepConfig& cfg, const RngStream& rng, int B) {
  if (B < 1) throw ConfigError("E-step batch size must be >= 1");
  cfg.validate(reward);
  std::vector<Trajectory<disc::SeqState>> out(static_cast<std::size_t>(B));
  parallel_for(out.size(), [&](std::size_t b) {
    RngStream r = rng.split(b);
    out[b] = sample_posterior_trajectory(policy, guide, reward, cfg, r);
  });
  return out;
}

}  // namespace davlab::estep
