#include "davlab/continuous.hpp"

#include <cmath>
#include <numbers>

#include "davlab/errors.hpp"
#include "davlab/tolerances.hpp"

namespace davlab::cont {

void GaussianMixture::validate() const {
  if (weights.empty()) throw ConfigError("mixture: no components");
  if (means.size() != weights.size() || stds.size() != weights.size()) {
    throw ConfigError("mixture: weights, means and stds must have equal length");
  }
  const int d = dim();
  if (d < 1) throw ConfigError("mixture: dimension must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] >= 0.0)) throw ConfigError("mixture: negative weight");
    if (!(stds[k] > 0.0)) throw ConfigError("mixture: stds must be positive");
    if (static_cast<int>(means[k].size()) != d) throw ConfigError("mixture: inconsistent mean dimension");
    num::require_finite(means[k].span(), "mixture mean");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > Tolerances::kMixtureWeights) {
    throw ConfigError("mixture: weights must sum to 1");
  }
}

Vec GaussianMixture::sample(RngStream& rng) const {
  const std::size_t k = num::sample_categorical(weights, rng);
  Vec x = means[k];
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += stds[k] * rng.normal();
  return x;
}

Vec GaussianMixture::mean() const {
  Vec m(static_cast<std::size_t>(dim()));
  for (std::size_t k = 0; k < weights.size(); ++k) m.axpy(weights[k], means[k]);
  return m;
}

Vec forward_marginal_sample(const Vec& x0, int t, const sched::ContinuousSchedule& schedule,
                            RngStream& rng) {
  if (t < 1 || t > schedule.steps()) throw DomainError("forward_marginal_sample: t out of range");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  Vec xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + s * rng.normal();
  return xt;
}

namespace {

struct Posterior {
  std::vector<double> resp;   // ρ_k
  std::vector<Vec> means;     // m_k
  std::vector<double> gain;   // ∂m_k/∂x_t (scalar times identity)
  std::vector<double> var;    // v_k, marginal variance of x_t under component k
  std::vector<double> post;   // per-dimension Var[x_0 | x_t, k]
  Vec x0hat;
};

Posterior posterior(const Vec& xt, int t, const GaussianMixture& mix,
                    const sched::ContinuousSchedule& schedule) {
  num::require_same_size(xt.size(), static_cast<std::size_t>(mix.dim()), "analytic_x0hat");
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const std::size_t K = mix.components();
  const double d = static_cast<double>(xt.size());
  Posterior p;
  p.resp.resize(K);
  p.means.resize(K);
  p.gain.resize(K);
  p.var.resize(K);
  p.post.resize(K);
  std::vector<double> logits(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double s2 = mix.stds[k] * mix.stds[k];
    const double v = ab * s2 + 1.0 - ab;
    double dist2 = 0.0;
    for (std::size_t i = 0; i < xt.size(); ++i) {
      const double r = xt[i] - sab * mix.means[k][i];
      dist2 += r * r;
    }
    logits[k] = (mix.weights[k] > 0.0 ? std::log(mix.weights[k]) : -INFINITY) - 0.5 * d * std::log(v) -
                0.5 * dist2 / v;
    Vec m(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i) {
      m[i] = (sab * s2 * xt[i] + (1.0 - ab) * mix.means[k][i]) / v;
    }
    p.means[k] = std::move(m);
    p.gain[k] = sab * s2 / v;
    p.var[k] = v;
    p.post[k] = s2 * (1.0 - ab) / v;
  }
  const Vec r = num::softmax(logits);
  p.x0hat = Vec(xt.size());
  for (std::size_t k = 0; k < K; ++k) {
    p.resp[k] = r[k];
    p.x0hat.axpy(r[k], p.means[k]);
  }
  return p;
}

}  // namespace

Vec analytic_x0hat(const Vec& xt, int t, const GaussianMixture& mixture,
                   const sched::ContinuousSchedule& schedule) {
  if (t == 0) return xt;
  return posterior(xt, t, mixture, schedule).x0hat;
}

Vec x0hat_vjp(const Vec& xt, int t, const GaussianMixture& mixture,
              const sched::ContinuousSchedule& schedule, const Vec& cotangent) {
  num::require_same_size(cotangent.size(), xt.size(), "x0hat_vjp");
  if (t == 0) return cotangent;
  const Posterior p = posterior(xt, t, mixture, schedule);
  const double sab = std::sqrt(schedule.alpha_bar(t));
  const std::size_t K = mixture.components();
  // ∂ρ_k/∂x = ρ_k (g_k - ḡ), g_k = -(x - √ᾱ μ_k)/v_k
  std::vector<Vec> g(K);
  Vec gbar(xt.size());
  for (std::size_t k = 0; k < K; ++k) {
    Vec gk(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i) gk[i] = -(xt[i] - sab * mixture.means[k][i]) / p.var[k];
    gbar.axpy(p.resp[k], gk);
    g[k] = std::move(gk);
  }
  Vec out(xt.size());
  for (std::size_t k = 0; k < K; ++k) {
    if (p.resp[k] == 0.0) continue;
    out.axpy(p.resp[k] * p.gain[k], cotangent);
    const double mc = p.means[k].dot(cotangent);
    Vec dk = g[k] - gbar;
    out.axpy(p.resp[k] * mc, dk);
  }
  return out;
}

double x0_posterior_variance(const Vec& xt, int t, const GaussianMixture& mixture,
                             const sched::ContinuousSchedule& schedule) {
  if (t == 0) return 0.0;
  const Posterior p = posterior(xt, t, mixture, schedule);
  const double d = static_cast<double>(xt.size());
  double within = 0.0;
  double second = 0.0;
  for (std::size_t k = 0; k < p.resp.size(); ++k) {
    within += p.resp[k] * p.post[k];
    second += p.resp[k] * p.means[k].squared_norm();
  }
  return within + (second - p.x0hat.squared_norm()) / d;
}

namespace {

// E_{x_t}[tr Var(x_0|x_t)]/d. Exact for one component, Monte Carlo otherwise.
double expected_posterior_variance(int t, const GaussianMixture& mix,
                                   const sched::ContinuousSchedule& schedule) {
  const double ab = schedule.alpha_bar(t);
  if (mix.components() == 1) {
    const double s2 = mix.stds[0] * mix.stds[0];
    return s2 * (1.0 - ab) / (ab * s2 + 1.0 - ab);
  }
  constexpr int kSamples = 4096;
  RngStream rng(0x5eedULL, static_cast<std::uint64_t>(t));
  double acc = 0.0;
  for (int n = 0; n < kSamples; ++n) {
    const Vec x0 = mix.sample(rng);
    const Vec xt = forward_marginal_sample(x0, t, schedule, rng);
    acc += x0_posterior_variance(xt, t, mix, schedule);
  }
  return acc / kSamples;
}

}  // namespace

ContinuousPolicy::ContinuousPolicy(sched::ContinuousSchedule schedule, GaussianMixture mixture,
                                   num::Mlp residual, VarianceMode variance)
    : schedule_(std::move(schedule)),
      mixture_(std::move(mixture)),
      residual_(std::move(residual)),
      variance_(variance) {
  mixture_.validate();
  const std::size_t d = static_cast<std::size_t>(mixture_.dim());
  if (residual_.input_width() != d + 1 || residual_.output_width() != d) {
    throw ConfigError("continuous policy: residual must map R^{d+1} -> R^d");
  }
  sigma2_.assign(static_cast<std::size_t>(schedule_.steps()) + 1, 0.0);
  for (int t = 1; t <= schedule_.steps(); ++t) {
    if (variance_ == VarianceMode::ddpm_posterior) {
      sigma2_[t] = schedule_.sigma2(t);
    } else {
      const double ab = schedule_.alpha_bar(t);
      const double abp = schedule_.alpha_bar(t - 1);
      const double b = schedule_.beta(t);
      const double tilde = b * (1.0 - abp) / (1.0 - ab);
      const double c1 = std::sqrt(abp) * b / (1.0 - ab);
      sigma2_[t] = tilde + c1 * c1 * expected_posterior_variance(t, mixture_, schedule_);
    }
    if (!(sigma2_[t] > 0.0)) throw ConfigError("continuous policy: sigma_t^2 must be positive");
  }
}

Vec ContinuousPolicy::x0hat(const Vec& xt, int t) const {
  return analytic_x0hat(xt, t, mixture_, schedule_);
}

Vec ContinuousPolicy::analytic_mean(const Vec& xt, int t) const {
  if (t < 1 || t > steps()) throw DomainError("policy_mean: t out of range");
  const double ab = schedule_.alpha_bar(t);
  const double abp = schedule_.alpha_bar(t - 1);
  const double b = schedule_.beta(t);
  const double c0 = std::sqrt(abp) * b / (1.0 - ab);
  const double ct = std::sqrt(1.0 - b) * (1.0 - abp) / (1.0 - ab);
  const Vec xh = x0hat(xt, t);
  Vec mu(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) mu[i] = c0 * xh[i] + ct * xt[i];
  return mu;
}

Vec ContinuousPolicy::residual_input(const Vec& xt, int t) const {
  Vec in(xt.size() + 1);
  for (std::size_t i = 0; i < xt.size(); ++i) in[i] = xt[i];
  in[xt.size()] = static_cast<double>(t) / static_cast<double>(steps());
  return in;
}

Vec ContinuousPolicy::residual_output(const Vec& xt, int t) const {
  if (frozen) return Vec(xt.size());
  return residual_.forward(residual_input(xt, t));
}

Vec ContinuousPolicy::mean(const Vec& xt, int t) const {
  num::require_same_size(xt.size(), static_cast<std::size_t>(dim()), "policy_mean");
  Vec mu = analytic_mean(xt, t);
  if (!frozen) mu += residual_output(xt, t);
  return mu;
}

double ContinuousPolicy::sigma2(int t) const {
  if (t < 1 || t > steps()) throw DomainError("sigma2: t out of range");
  return sigma2_[t];
}

double gaussian_logpdf(const Vec& x, const Vec& mean, double var) {
  if (!(var > 0.0)) throw ConfigError("gaussian_logpdf: variance must be positive");
  num::require_same_size(x.size(), mean.size(), "gaussian_logpdf");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - mean[i];
    d2 += r * r;
  }
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * d2 / var;
}

double ContinuousPolicy::logprob(const Vec& xt, const Vec& xprev, int t) const {
  return gaussian_logpdf(xprev, mean(xt, t), sigma2(t));
}

void ContinuousPolicy::mean_vjp(const Vec& xt, int t, const Vec& upstream, std::span<double> grad,
                                double scale) const {
  if (frozen) return;
  residual_.backward_into(residual_input(xt, t), upstream, grad, scale);
}

void ContinuousPolicy::logprob_grad(const Vec& xt, const Vec& xprev, int t, std::span<double> grad,
                                    double scale) const {
  if (frozen) return;
  const Vec mu = mean(xt, t);
  const double var = sigma2(t);
  Vec dmu(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) dmu[i] = (xprev[i] - mu[i]) / var;
  mean_vjp(xt, t, dmu, grad, scale);
}

Vec ContinuousPolicy::sample_initial(RngStream& rng) const {
  return rng.normal_vec(static_cast<std::size_t>(dim()));
}

Vec ContinuousPolicy::sample_step(const Vec& xt, int t, RngStream& rng) const {
  Vec x = mean(xt, t);
  const double s = std::sqrt(sigma2(t));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += s * rng.normal();
  return x;
}

Vec policy_mean(const ContinuousPolicy& policy, const Vec& xt, int t) { return policy.mean(xt, t); }

double policy_logprob(const ContinuousPolicy& policy, const Vec& xt, const Vec& xprev, int t) {
  return policy.logprob(xt, xprev, t);
}

std::vector<Trajectory<Vec>> rollout(const ContinuousPolicy& policy, const RngStream& rng, int n) {
  if (n < 1) throw DomainError("rollout: n must be >= 1");
  std::vector<Trajectory<Vec>> out(static_cast<std::size_t>(n));
  const int T = policy.steps();
  for (int b = 0; b < n; ++b) {
    RngStream r = rng.split(static_cast<std::uint64_t>(b));
    Trajectory<Vec>& tr = out[b];
    tr.snapshot = policy.version;
    tr.states.reserve(static_cast<std::size_t>(T) + 1);
    tr.states.push_back(policy.sample_initial(r));
    for (int t = T; t >= 1; --t) {
      const Vec& xt = tr.states.back();
      Vec next = policy.sample_step(xt, t, r);
      StepRecord rec;
      rec.t = t;
      rec.log_prior = policy.logprob(xt, next, t);
      rec.log_proposal = rec.log_prior;
      tr.steps.push_back(rec);
      tr.states.push_back(std::move(next));
    }
  }
  return out;
}

num::Mlp make_residual(int dim, const std::vector<std::size_t>& hidden, num::Activation act,
                       RngStream& rng) {
  std::vector<std::size_t> widths;
  widths.push_back(static_cast<std::size_t>(dim) + 1);
  for (std::size_t h : hidden) widths.push_back(h);
  widths.push_back(static_cast<std::size_t>(dim));
  num::Mlp net(widths, act);
  net.init(rng, /*zero_final=*/true);
  return net;
}

}  // namespace davlab::cont
