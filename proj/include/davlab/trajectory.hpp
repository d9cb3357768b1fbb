#pragma once

#include <cstdint>
#include <vector>

namespace davlab {

// Per-step E-step bookkeeping for the transition x_t -> x_{t-1}.
struct StepRecord {
  int t = 0;
  double log_prior = 0.0;     // log p_θk(x_{t-1}|x_t) of the chosen particle
  double log_proposal = 0.0;  // log η̂(x_{t-1}|x_t) of the chosen particle
  double log_weight = 0.0;    // log of its normalized importance weight
  double q_hat = 0.0;         // Q̂ of the chosen particle
  int particles = 1;
  double weight_entropy = 0.0;
  bool fallback = false;
};

// Denoising trajectory. states[0] is x_T and states[T] is x_0.
template <class State>
struct Trajectory {
  std::vector<State> states;
  std::vector<StepRecord> steps;  // steps[i] describes states[i] -> states[i+1]
  double reward = 0.0;
  std::uint64_t snapshot = 0;  // parameter version that generated it

  int horizon() const { return static_cast<int>(states.size()) - 1; }
  const State& at(int t) const { return states[horizon() - t]; }
  const State& terminal() const { return states.back(); }
};

}  // namespace davlab
