#pragma once

// Terminal rewards R(x_0) for both worlds. Discrete rewards also have a
// multilinear relaxation over per-position token distributions.

#include <string>
#include <vector>

#include "davlab/discrete.hpp"
#include "davlab/numkit.hpp"

namespace davlab::rewards {

using num::Mat;
using num::Vec;

enum class Domain { continuous, discrete };

enum class RewardKind {
  linear,           // cᵀx
  neg_sq_dist,      // -‖x - g‖²
  mode_preference,  // Σ_k a_k exp(-‖x - μ_k‖² / 2τ²)
  motif_count,      // occurrences of a token string, every sliding window
  composition,      // count of one token
  constant,
};

RewardKind kind_from_string(const std::string& s);
std::string to_string(RewardKind k);
Domain domain_of(RewardKind k);

struct RewardSpec {
  std::string name;
  RewardKind kind = RewardKind::linear;
  // false marks a black-box reward: values only.
  bool differentiable = true;
  double scale = 1.0;

  Vec coef;                  // linear
  Vec goal;                  // neg_sq_dist
  std::vector<Vec> centers;  // mode_preference
  std::vector<double> amplitudes;
  double tau = 1.0;
  disc::Tokens motif;        // motif_count
  int token = 0;             // composition
  double value = 0.0;        // constant

  Domain domain() const { return domain_of(kind); }
  void validate() const;
};

double reward_value(const RewardSpec& spec, const Vec& x0);
double reward_value(const RewardSpec& spec, const disc::Tokens& x0);

Vec reward_grad(const RewardSpec& spec, const Vec& x0);

// Expected reward when position ℓ independently takes token k with
// probability p(ℓ, k). p is L x (K+1); the last column is MASK, which never
// matches anything.
double relaxed_reward_value(const RewardSpec& spec, const Mat& p);
// ∂/∂p of relaxed_reward_value, L x (K+1) with a zero MASK column.
Mat relaxed_reward_grad(const RewardSpec& spec, const Mat& p);

// L x (K+1) one-hot encoding of a token array.
Mat one_hot(const disc::Tokens& tokens, int K);
// Pads an L x K distribution with a zero MASK column.
Mat with_mask_column(const Mat& p);

}  // namespace davlab::rewards
