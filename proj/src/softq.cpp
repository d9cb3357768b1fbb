#include "davlab/softq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "davlab/errors.hpp"

namespace davlab::softq {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool has_mask(const disc::Tokens& x) {
  return std::find(x.begin(), x.end(), disc::kMask) != x.end();
}
}  // namespace

void SoftQConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive and finite");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
}

double SoftQConfig::discount(int t) const { return std::pow(gamma, t - 1); }

double approx_soft_q(double reward_at_x0hat, int t, const SoftQConfig& cfg) {
  if (t < 1) throw DomainError("approx_soft_q: t must be >= 1");
  return cfg.discount(t) * reward_at_x0hat;
}

double approx_soft_q(const cont::ContinuousPolicy& prior, const num::Vec& xprev, int t,
                     const rewards::RewardSpec& reward, const SoftQConfig& cfg) {
  const num::Vec xh = cont::analytic_x0hat(xprev, t - 1, prior.mixture(), prior.schedule());
  return approx_soft_q(rewards::reward_value(reward, xh), t, cfg);
}

double reward_at_x0hat(const disc::DiscretePolicy& prior, const disc::Tokens& xs, int s,
                       const rewards::RewardSpec& reward) {
  if (!has_mask(xs)) return rewards::reward_value(reward, xs);
  if (s < 1) throw DomainError("reward_at_x0hat: masked sequence at t = 0");
  return rewards::relaxed_reward_value(reward, rewards::with_mask_column(prior.denoiser().probs(xs, s)));
}

double approx_soft_q(const disc::DiscretePolicy& prior, const disc::Tokens& xprev, int t,
                     const rewards::RewardSpec& reward, const SoftQConfig& cfg) {
  return approx_soft_q(reward_at_x0hat(prior, xprev, t - 1, reward), t, cfg);
}

// ---------------------------------------------------------------------------

ExactSoftTables::ExactSoftTables(const disc::DiscretePolicy& prior, const rewards::RewardSpec& reward,
                                 const SoftQConfig& cfg, std::size_t cap)
    : prior_(prior), reward_(reward), cfg_(cfg) {
  cfg_.validate();
  const int L = prior.length();
  const int K = prior.vocab();
  const int T = prior.steps();
  const std::size_t S = disc::state_space_size(L, K, cap);
  V_.assign(static_cast<std::size_t>(T + 1), std::vector<double>(S, kNaN));
  for (std::size_t i = 0; i < S; ++i) {
    if (!has_mask(disc::state_from_index(i, L, K))) V_[0][i] = 0.0;
  }
  std::vector<double> terms;
  for (int t = 1; t <= T; ++t) {
    for (std::size_t i = 0; i < S; ++i) {
      const disc::Tokens xt = disc::state_from_index(i, L, K);
      const auto next = prior_.transitions(xt, t);
      terms.clear();
      for (const auto& tr : next) terms.push_back(tr.log_prob + Q(t, xt, tr.next) / cfg_.alpha);
      V_[t][i] = cfg_.alpha * num::log_sum_exp(terms);
    }
  }
}

double ExactSoftTables::V(int t, const disc::Tokens& x) const {
  if (t < 0 || t > steps()) throw DomainError("ExactSoftTables::V: t out of range");
  const double v = V_[static_cast<std::size_t>(t)][disc::state_index(x, vocab())];
  if (std::isnan(v)) throw DomainError("ExactSoftTables::V: state not valid at this timestep");
  return v;
}

double ExactSoftTables::Q(int t, const disc::Tokens& xt, const disc::Tokens& xprev) const {
  (void)xt;
  if (t < 1 || t > steps()) throw DomainError("ExactSoftTables::Q: t out of range");
  if (t == 1) {
    if (has_mask(xprev)) throw DomainError("ExactSoftTables::Q: x_0 contains MASK");
    return rewards::reward_value(reward_, xprev);
  }
  return cfg_.gamma * V(t - 1, xprev);
}

double ExactSoftTables::log_Z(int t, const disc::Tokens& xt) const { return V(t, xt) / cfg_.alpha; }

void ExactSoftTables::set_V(int t, const disc::Tokens& x, double v) {
  V_.at(static_cast<std::size_t>(t)).at(disc::state_index(x, vocab())) = v;
}

ExactSoftTables exact_soft_tables(const disc::DiscretePolicy& prior, const rewards::RewardSpec& reward,
                                  const SoftQConfig& cfg, std::size_t cap) {
  return ExactSoftTables(prior, reward, cfg, cap);
}

std::vector<disc::Transition> exact_soft_policy(const ExactSoftTables& tables, const disc::Tokens& xt,
                                                int t) {
  auto next = tables.prior().transitions(xt, t);
  const double lz = tables.log_Z(t, xt);
  const double alpha = tables.config().alpha;
  for (auto& tr : next) {
    tr.log_prob = tr.log_prob + tables.Q(t, xt, tr.next) / alpha - lz;
    tr.prob = std::exp(tr.log_prob);
  }
  return next;
}

double bellman_residual(const ExactSoftTables& tables) {
  const int L = tables.length();
  const int K = tables.vocab();
  const double alpha = tables.config().alpha;
  double worst = 0.0;
  std::vector<double> terms;
  for (int t = 1; t <= tables.steps(); ++t) {
    for (const auto& st : disc::enumerate_states(L, K, t)) {
      terms.clear();
      for (const auto& tr : tables.prior().transitions(st.tokens, t)) {
        terms.push_back(tr.log_prob + tables.Q(t, st.tokens, tr.next) / alpha);
      }
      worst = std::max(worst, std::abs(tables.V(t, st.tokens) - alpha * num::log_sum_exp(terms)));
    }
  }
  return worst;
}

std::vector<std::vector<double>> log_prior_moment(const disc::DiscretePolicy& prior,
                                                  const rewards::RewardSpec& reward, double c_over_alpha,
                                                  std::size_t cap) {
  const int L = prior.length();
  const int K = prior.vocab();
  const int T = prior.steps();
  const std::size_t S = disc::state_space_size(L, K, cap);
  std::vector<std::vector<double>> m(static_cast<std::size_t>(T + 1), std::vector<double>(S, kNaN));
  for (std::size_t i = 0; i < S; ++i) {
    const disc::Tokens x = disc::state_from_index(i, L, K);
    if (!has_mask(x)) m[0][i] = c_over_alpha * rewards::reward_value(reward, x);
  }
  std::vector<double> terms;
  for (int t = 1; t <= T; ++t) {
    for (std::size_t i = 0; i < S; ++i) {
      const disc::Tokens x = disc::state_from_index(i, L, K);
      terms.clear();
      for (const auto& tr : prior.transitions(x, t)) {
        terms.push_back(tr.log_prob + m[t - 1][disc::state_index(tr.next, K)]);
      }
      m[t][i] = num::log_sum_exp(terms);
    }
  }
  return m;
}

namespace {

struct McMoment {
  double log_mean = 0.0;
  double log_ci = 0.0;  // z · stderr / mean
};

// Monte-Carlo log E[exp(c·r/α) | x_s] from prior rollouts.
McMoment mc_moment(const std::vector<double>& rewards_seen, double c_over_alpha) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double r : rewards_seen) hi = std::max(hi, c_over_alpha * r);
  double mean = 0.0;
  double sq = 0.0;
  for (double r : rewards_seen) {
    const double e = std::exp(c_over_alpha * r - hi);
    mean += e;
    sq += e * e;
  }
  const double n = static_cast<double>(rewards_seen.size());
  mean /= n;
  const double var = std::max(0.0, sq / n - mean * mean);
  McMoment out;
  out.log_mean = hi + std::log(mean);
  out.log_ci = Tolerances::kMonteCarloZ * std::sqrt(var / n) / mean;
  return out;
}

}  // namespace

BoundReport check_bounds(const ExactSoftTables& tables, BoundMode mode, int samples, std::uint64_t seed,
                         double tol) {
  const auto& prior = tables.prior();
  const auto& cfg = tables.config();
  const int L = tables.length();
  const int K = tables.vocab();
  const int T = tables.steps();
  BoundReport rep;
  rep.mode = mode;
  rep.collapsed = cfg.gamma == 1.0;

  std::vector<std::vector<std::vector<double>>> low_moments;  // by t
  std::vector<std::vector<double>> up_moment;
  std::map<std::pair<int, std::size_t>, std::vector<double>> mc_rewards;
  if (mode == BoundMode::exact) {
    up_moment = log_prior_moment(prior, tables.reward(), 1.0 / cfg.alpha);
    low_moments.resize(static_cast<std::size_t>(T + 1));
    for (int t = 2; t <= T; ++t) {
      low_moments[t] = log_prior_moment(prior, tables.reward(), std::pow(cfg.gamma, t - 2) / cfg.alpha);
    }
  } else if (samples < 2) {
    throw ConfigError("check_bounds: Monte-Carlo mode needs at least 2 samples");
  }

  auto rollout_rewards = [&](int s, const disc::Tokens& from) -> const std::vector<double>& {
    const auto key = std::make_pair(s, disc::state_index(from, K));
    auto it = mc_rewards.find(key);
    if (it != mc_rewards.end()) return it->second;
    num::RngStream rng(seed, num::mix64(key.second * 131 + static_cast<std::size_t>(s)));
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(samples));
    for (int n = 0; n < samples; ++n) {
      disc::Tokens x = from;
      for (int u = s; u >= 1; --u) x = disc::sample_positions(prior.step_probs(x, u - 1, u), rng);
      out.push_back(rewards::reward_value(tables.reward(), x));
    }
    return mc_rewards.emplace(key, std::move(out)).first->second;
  };

  for (int t = 2; t <= T; ++t) {
    for (const auto& st : disc::enumerate_states(L, K, t)) {
      for (const auto& tr : prior.transitions(st.tokens, t)) {
        const std::size_t j = disc::state_index(tr.next, K);
        const double q = tables.Q(t, st.tokens, tr.next);
        double lower = 0.0;
        double upper = 0.0;
        double slack = tol * std::max(1.0, std::abs(q));
        if (mode == BoundMode::exact) {
          lower = cfg.alpha * cfg.gamma * low_moments[t][t - 1][j];
          upper = cfg.alpha * std::pow(cfg.gamma, t - 1) * up_moment[t - 1][j];
        } else {
          const auto& rs = rollout_rewards(t - 1, tr.next);
          const McMoment lo = mc_moment(rs, std::pow(cfg.gamma, t - 2) / cfg.alpha);
          const McMoment up = mc_moment(rs, 1.0 / cfg.alpha);
          lower = cfg.alpha * cfg.gamma * lo.log_mean;
          upper = cfg.alpha * std::pow(cfg.gamma, t - 1) * up.log_mean;
          const double ci = std::max(cfg.alpha * cfg.gamma * lo.log_ci,
                                     cfg.alpha * std::pow(cfg.gamma, t - 1) * up.log_ci);
          rep.max_ci = std::max(rep.max_ci, ci);
          slack += ci;
        }
        ++rep.checked;
        rep.max_gap = std::max(rep.max_gap, upper - lower);
        if (q < lower - slack || q > upper + slack) {
          rep.violations.push_back(BoundViolation{t, st.tokens, tr.next, lower, q, upper});
        }
      }
    }
  }
  return rep;
}

std::string BoundReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "bounds[%s]: checked=%d violations=%zu max_gap=%.3g max_ci=%.3g%s",
                mode == BoundMode::exact ? "exact" : "monte_carlo", checked, violations.size(), max_gap,
                max_ci, collapsed ? " (collapsed at gamma=1)" : "");
  return buf;
}

}  // namespace davlab::softq
