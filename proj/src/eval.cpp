#include "davlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "davlab/errors.hpp"

namespace davlab::eval {

std::string to_string(Estimator e) {
  return e == Estimator::exact_tabular ? "exact_tabular" : "surrogate_is";
}

double elbo_exact_tabular(const LogPolicy& log_p, const softq::ExactSoftTables& tables) {
  const auto& cfg = tables.config();
  const int T = tables.steps();
  const int L = tables.length();
  std::map<disc::Tokens, double> mass{{disc::Tokens(static_cast<std::size_t>(L), disc::kMask), 1.0}};
  double J = 0.0;
  for (int t = T; t >= 1; --t) {
    const double disc_w = std::pow(cfg.gamma, T - t);
    std::map<disc::Tokens, double> next_mass;
    for (const auto& [xt, m] : mass) {
      for (const auto& tr : softq::exact_soft_policy(tables, xt, t)) {
        if (tr.prob == 0.0) continue;
        double term = log_p(xt, t, tr.next) - tr.log_prob;
        if (t == 1) term += rewards::reward_value(tables.reward(), tr.next) / cfg.alpha;
        J += m * tr.prob * disc_w * term;
        next_mass[tr.next] += m * tr.prob;
      }
    }
    mass = std::move(next_mass);
  }
  return J;
}

double elbo_exact_tabular(const disc::DiscretePolicy& policy, const softq::ExactSoftTables& tables) {
  return elbo_exact_tabular(
      [&](const disc::Tokens& xt, int t, const disc::Tokens& xprev) { return policy.logprob(xt, xprev, t - 1, t); },
      tables);
}

namespace {

void enumerate_paths(const disc::DiscretePolicy& policy, const softq::ExactSoftTables& tables,
                     const disc::Tokens& xt, int t, double log_eta, double log_p, double& J) {
  if (t == 0) {
    const double r = rewards::reward_value(tables.reward(), xt);
    J += std::exp(log_eta) * (r / tables.config().alpha + log_p - log_eta);
    return;
  }
  // η* from Boltzmann tilting of the table's prior, normalized directly.
  const auto prior_next = tables.prior().transitions(xt, t);
  std::vector<double> logits;
  for (const auto& tr : prior_next) logits.push_back(tr.log_prob + tables.Q(t, xt, tr.next) / tables.config().alpha);
  const double lz = num::log_sum_exp(logits);
  for (std::size_t i = 0; i < prior_next.size(); ++i) {
    const double le = logits[i] - lz;
    if (!std::isfinite(le)) continue;
    enumerate_paths(policy, tables, prior_next[i].next, t - 1, log_eta + le,
                    log_p + policy.logprob(xt, prior_next[i].next, t - 1, t), J);
  }
}

}  // namespace

double elbo_trajectory_enumeration(const disc::DiscretePolicy& policy, const softq::ExactSoftTables& tables) {
  double J = 0.0;
  enumerate_paths(policy, tables, disc::Tokens(static_cast<std::size_t>(tables.length()), disc::kMask),
                  tables.steps(), 0.0, 0.0, J);
  return J;
}

namespace {

template <class Policy, class State>
double surrogate(const Policy& policy, const std::vector<Trajectory<State>>& batch, const softq::SoftQConfig& cfg,
                 double (*logp)(const Policy&, const State&, const State&, int)) {
  if (batch.empty()) throw DataError("elbo_surrogate: empty batch");
  double total = 0.0;
  for (const auto& tr : batch) {
    const int T = tr.horizon();
    double J = 0.0;
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
      const auto& rec = tr.steps[i];
      double term = logp(policy, tr.states[i], tr.states[i + 1], rec.t) - rec.log_proposal -
                    (std::log(static_cast<double>(rec.particles)) + rec.log_weight);
      if (rec.t == 1) term += tr.reward / cfg.alpha;
      J += std::pow(cfg.gamma, T - rec.t) * term;
    }
    total += J;
  }
  return total / static_cast<double>(batch.size());
}

double cont_logp(const cont::ContinuousPolicy& p, const num::Vec& xt, const num::Vec& xprev, int t) {
  return p.logprob(xt, xprev, t);
}
double disc_logp(const disc::DiscretePolicy& p, const disc::SeqState& xt, const disc::SeqState& xprev, int t) {
  return p.logprob(xt.tokens, xprev.tokens, t - 1, t);
}

}  // namespace

double elbo_surrogate(const cont::ContinuousPolicy& policy, const std::vector<Trajectory<num::Vec>>& batch,
                      const softq::SoftQConfig& cfg) {
  return surrogate(policy, batch, cfg, &cont_logp);
}

double elbo_surrogate(const disc::DiscretePolicy& policy,
                      const std::vector<Trajectory<disc::SeqState>>& batch, const softq::SoftQConfig& cfg) {
  return surrogate(policy, batch, cfg, &disc_logp);
}

int levenshtein(const disc::Tokens& a, const disc::Tokens& b) {
  std::vector<int> prev(b.size() + 1);
  std::vector<int> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double diversity(const std::vector<disc::Tokens>& samples) {
  if (samples.size() < 2) throw DomainError("diversity: need at least 2 samples");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      total += levenshtein(samples[i], samples[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double diversity(const std::vector<num::Vec>& samples) {
  if (samples.size() < 2) throw DomainError("diversity: need at least 2 samples");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      total += (samples[i] - samples[j]).norm();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double mode_coverage(const std::vector<num::Vec>& samples, const cont::GaussianMixture& mixture, double radius) {
  if (mixture.components() == 0) return 0.0;
  std::size_t hit = 0;
  for (const auto& mu : mixture.means) {
    for (const auto& x : samples) {
      if ((x - mu).norm() <= radius) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(mixture.components());
}

RewardStats reward_stats(const std::vector<double>& rewards) {
  RewardStats s;
  if (rewards.empty()) return s;
  for (double r : rewards) s.mean += r;
  s.mean /= static_cast<double>(rewards.size());
  double v = 0.0;
  for (double r : rewards) v += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(v / static_cast<double>(rewards.size()));
  return s;
}

}  // namespace davlab::eval
