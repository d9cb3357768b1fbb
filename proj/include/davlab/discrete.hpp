#pragma once

// Masked discrete diffusion over length-L sequences with K tokens plus MASK:
// absorbing forward kernel, SUBS reverse parameterization, tabular or MLP
// x̂0 denoisers and MDLM pretraining.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "davlab/numkit.hpp"
#include "davlab/sched.hpp"
#include "davlab/tolerances.hpp"
#include "davlab/trajectory.hpp"

namespace davlab::disc {

using num::Mat;
using num::RngStream;
using num::Vec;

inline constexpr int kMask = -1;

using Tokens = std::vector<int>;

struct SeqState {
  Tokens tokens;
  int t = 0;

  int length() const { return static_cast<int>(tokens.size()); }
  int masked_count() const;
  friend bool operator==(const SeqState&, const SeqState&) = default;
};

// (K+1)^L, throwing OracleUnavailable when it exceeds cap.
std::size_t state_space_size(int L, int K, std::size_t cap = Tolerances::kEnumerationCap);
// Base-(K+1) index with MASK as digit K; position 0 is the least significant digit.
std::size_t state_index(const Tokens& tokens, int K);
Tokens state_from_index(std::size_t index, int L, int K);

// Every token array consistent with timestep t: no MASK at t = 0, all of
// {0..K-1, MASK}^L otherwise.
std::vector<SeqState> enumerate_states(int L, int K, int t,
                                       std::size_t cap = Tolerances::kEnumerationCap);

std::string to_string(const Tokens& tokens, const std::string& alphabet);
Tokens parse_tokens(const std::string& text, const std::string& alphabet);

enum class DenoiserKind { tabular, mlp };

// Predicts x̂0(x_t, t) as per-position logits over the K clean tokens.
class DiscreteDenoiser {
 public:
  DiscreteDenoiser() = default;
  static DiscreteDenoiser tabular(int L, int K, int T, std::size_t cap = Tolerances::kEnumerationCap);
  static DiscreteDenoiser mlp(int L, int K, int T, const std::vector<std::size_t>& hidden,
                              num::Activation act, RngStream& rng);

  DenoiserKind kind() const { return kind_; }
  int length() const { return L_; }
  int vocab() const { return K_; }
  int steps() const { return T_; }

  std::vector<double>& params();
  const std::vector<double>& params() const;

  // L x K raw logits.
  Mat logits(const Tokens& xt, int t) const;
  // L x K x̂0 distribution; unmasked positions are a point mass on their token.
  Mat probs(const Tokens& xt, int t) const;
  // grad += scale · (∂logits/∂θ)ᵀ dlogits
  void backward(const Tokens& xt, int t, const Mat& dlogits, std::span<double> grad,
                double scale = 1.0) const;

 private:
  std::size_t row_offset(const Tokens& xt, int t) const;
  Vec encode(const Tokens& xt, int t) const;

  DenoiserKind kind_ = DenoiserKind::tabular;
  int L_ = 0;
  int K_ = 0;
  int T_ = 0;
  std::size_t states_ = 0;
  std::vector<double> table_;
  num::Mlp net_;
};

struct Transition {
  Tokens next;
  double prob = 0.0;
  double log_prob = 0.0;
};

class DiscretePolicy {
 public:
  DiscretePolicy() = default;
  DiscretePolicy(sched::DiscreteSchedule schedule, DiscreteDenoiser denoiser);

  int length() const { return denoiser_.length(); }
  int vocab() const { return denoiser_.vocab(); }
  int steps() const { return schedule_.steps(); }
  const sched::DiscreteSchedule& schedule() const { return schedule_; }
  const DiscreteDenoiser& denoiser() const { return denoiser_; }
  DiscreteDenoiser& denoiser() { return denoiser_; }
  std::vector<double>& params() { return denoiser_.params(); }
  const std::vector<double>& params() const { return denoiser_.params(); }

  std::uint64_t version = 0;

  // Per-position distribution of x_s given x_t as an L x (K+1) matrix whose
  // last column is MASK.
  Mat step_probs(const Tokens& xt, int s, int t) const;
  // L x (K+1) log probabilities (-inf where impossible).
  Mat step_log_probs(const Tokens& xt, int s, int t) const;

  // Throws UnreachableTransition when xprev has zero probability.
  double logprob(const Tokens& xt, const Tokens& xprev, int s, int t) const;
  // grad += scale · ∇_θ log p_θ(xprev | xt)
  void logprob_grad(const Tokens& xt, const Tokens& xprev, int s, int t, std::span<double> grad,
                    double scale = 1.0) const;

  // Exhaustive distribution over x_{t-1}.
  std::vector<Transition> transitions(const Tokens& xt, int t) const;

  SeqState initial_state() const;

 private:
  sched::DiscreteSchedule schedule_;
  DiscreteDenoiser denoiser_;
};

// SUBS per-position probabilities from an x̂0 distribution (L x K).
Mat subs_step_probs(const Tokens& xt, const Mat& x0hat, double alpha_bar_s, double alpha_bar_t);

SeqState forward_mask_sample(const SeqState& x0, int t, const sched::DiscreteSchedule& schedule,
                             RngStream& rng);
SeqState subs_reverse_step(const DiscretePolicy& policy, const SeqState& xt, int s, int t,
                           RngStream& rng);
double policy_logprob_discrete(const DiscretePolicy& policy, const SeqState& xt,
                               const SeqState& xprev, int s, int t);

// Draws every position independently from an L x (K+1) row-stochastic matrix.
Tokens sample_positions(const Mat& probs, RngStream& rng);
// Σ_ℓ log probs[ℓ][token_ℓ]; -inf when any factor is zero.
double positions_log_prob(const Mat& log_probs, const Tokens& tokens);

std::vector<Trajectory<SeqState>> rollout(const DiscretePolicy& policy, const RngStream& rng, int n);

struct SequenceDistribution {
  std::vector<Tokens> support;
  std::vector<double> weights;

  void validate(int L, int K) const;
  Tokens sample(RngStream& rng) const;
};

std::vector<Tokens> sample_dataset(const SequenceDistribution& dist, int n, RngStream& rng);

struct PretrainConfig {
  int epochs = 400;
  double lr = 0.05;
  // Full expectation over masks when the work per epoch stays below this;
  // otherwise one sampled (t, mask) per sequence per epoch.
  std::size_t exact_budget = 2'000'000;
  int batch = 64;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double train_loss_before = 0.0;
  double train_loss_after = 0.0;
  double heldout_loss_before = 0.0;
  double heldout_loss_after = 0.0;
  int epochs = 0;
  bool exact = false;
};

// Expected MDLM loss Σ_t E_q[w_t Σ_{masked ℓ} -log x̂0_ℓ(x_t)[x0_ℓ]], w_t = (ᾱ_{t-1}-ᾱ_t)/(1-ᾱ_t),
// averaged over the dataset, with the expectation over masks taken exactly.
double mdlm_loss(const DiscretePolicy& policy, const std::vector<Tokens>& data,
                 std::vector<double>* grad = nullptr);

PretrainReport pretrain_discrete(DiscretePolicy& policy, const std::vector<Tokens>& dataset,
                                 const std::vector<Tokens>& heldout, const PretrainConfig& cfg);

}  // namespace davlab::disc
