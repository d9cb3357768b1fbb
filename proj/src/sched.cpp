#include "davlab/sched.hpp"

#include <string>

#include "davlab/errors.hpp"

namespace davlab::sched {

ContinuousSchedule::ContinuousSchedule(int T, std::vector<double> beta) : T_(T) {
  if (T < 1) throw ConfigError("continuous schedule: T must be >= 1");
  if (static_cast<int>(beta.size()) != T) throw ConfigError("continuous schedule: need T betas");
  beta_.assign(1, 0.0);
  alpha_bar_.assign(1, 1.0);
  sigma2_.assign(1, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double b = beta[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("continuous schedule: beta outside (0,1)");
    beta_.push_back(b);
    alpha_bar_.push_back(alpha_bar_.back() * (1.0 - b));
  }
  for (int t = 1; t <= T; ++t) {
    const double post = beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
    sigma2_.push_back(t == 1 ? beta_[1] : post);
  }
}

void ContinuousSchedule::check(int t, int lo) const {
  if (t < lo || t > T_) {
    throw DomainError("continuous schedule: timestep " + std::to_string(t) + " out of range");
  }
}

double ContinuousSchedule::beta(int t) const {
  check(t, 1);
  return beta_[t];
}

double ContinuousSchedule::alpha(int t) const { return 1.0 - beta(t); }

double ContinuousSchedule::alpha_bar(int t) const {
  check(t, 0);
  return alpha_bar_[t];
}

double ContinuousSchedule::sigma2(int t) const {
  check(t, 1);
  return sigma2_[t];
}

ContinuousSchedule make_continuous_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("continuous schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("continuous schedule: need 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> beta(T);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    beta[t - 1] = beta_min + (beta_max - beta_min) * frac;
  }
  return ContinuousSchedule(T, std::move(beta));
}

DiscreteSchedule::DiscreteSchedule(int T) : T_(T) {
  if (T < 2) throw ConfigError("discrete schedule: T must be >= 2");
}

double DiscreteSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T_) throw DomainError("discrete schedule: timestep out of range");
  if (t == T_) return 0.0;
  return 1.0 - static_cast<double>(t) / static_cast<double>(T_);
}

DiscreteSchedule make_discrete_schedule(int T) { return DiscreteSchedule(T); }

}  // namespace davlab::sched
