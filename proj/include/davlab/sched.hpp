#pragma once

#include <vector>

namespace davlab::sched {

// Linear-β DDPM schedule. Arrays are indexed by timestep 0..T; index 0 only
// carries ᾱ_0 = 1.
class ContinuousSchedule {
 public:
  ContinuousSchedule() = default;
  ContinuousSchedule(int T, std::vector<double> beta);

  int steps() const { return T_; }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  // DDPM posterior variance β_t(1-ᾱ_{t-1})/(1-ᾱ_t); β_1 at t = 1 where it would vanish.
  double sigma2(int t) const;

 private:
  void check(int t, int lo) const;

  int T_ = 0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma2_;
};

// β_t linear from beta_min to beta_max over t = 1..T.
ContinuousSchedule make_continuous_schedule(int T, double beta_min, double beta_max);

// Masking schedule: ᾱ_t = 1 - t/T is the probability a clean token is still
// unmasked at step t.
class DiscreteSchedule {
 public:
  DiscreteSchedule() = default;
  explicit DiscreteSchedule(int T);

  int steps() const { return T_; }
  double alpha_bar(int t) const;

 private:
  int T_ = 0;
};

DiscreteSchedule make_discrete_schedule(int T);

}  // namespace davlab::sched
