#pragma once

// Outer EM loop with checkpointing and metrics output, plus the pretrain,
// eval, oracle and ablation drivers behind the command-line tool.

#include <string>
#include <vector>

#include "davlab/checkpoint.hpp"
#include "davlab/config.hpp"
#include "davlab/eval.hpp"

namespace davlab::exp {

using config::ExperimentConfig;

inline constexpr const char* kCsvHeader =
    "epoch,estimator,elbo_per_trajectory,mean_reward,reward_std,diversity,mode_coverage,"
    "posterior_mean_reward,weight_entropy,fallback_count,loss_before,loss_after,samples";

std::string csv_row(const eval::ElboRecord& r);

struct RunOptions {
  std::string out_dir;  // empty: nothing is written
  std::string resume;   // checkpoint path
  bool verbose = false;
  // Stop after this many epochs have been emitted (for resume tests); -1 runs to the end.
  int stop_after = -1;
};

struct RunResult {
  std::vector<eval::ElboRecord> records;
  std::string csv;
  std::vector<double> theta;
  std::vector<double> theta0;
  double pretrain_heldout_before = 0.0;
  double pretrain_heldout_after = 0.0;
};

// Pretrained policies. The continuous one is analytic with a zeroed residual;
// the discrete one is trained (or loaded) per the config.
cont::ContinuousPolicy build_continuous(const ExperimentConfig& cfg);
disc::DiscretePolicy build_discrete(const ExperimentConfig& cfg, disc::PretrainReport* report = nullptr);

RunResult run_align(const ExperimentConfig& cfg, const RunOptions& opts = {});
// Same world, seeds and budgets as run_align with the E-step variant swapped.
RunResult run_ablation(config::Algorithm variant, ExperimentConfig cfg, const RunOptions& opts = {});

struct EvalResult {
  int samples = 0;
  double amortized_mean_reward = 0.0;
  double amortized_reward_std = 0.0;
  double posterior_mean_reward = 0.0;
  double posterior_reward_std = 0.0;
  double diversity = std::numeric_limits<double>::quiet_NaN();
  double mode_coverage = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> amortized_dump;
  std::vector<std::string> posterior_dump;
};

EvalResult run_eval(const std::string& checkpoint_path, int n, std::uint64_t seed, const std::string& out_dir = "");

struct OracleCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct OracleOptions {
  bool corrupt_table = false;  // negative control
  int repeats = 10000;
  std::vector<int> particle_counts{1, 4, 16, 64};
  double tv_threshold = 0.05;
};

struct OracleReport {
  std::vector<OracleCheck> checks;
  bool ok() const;
  std::string text() const;
};

OracleReport run_oracle(const ExperimentConfig& cfg, const OracleOptions& opts = {}, const std::string& out_dir = "");

// Trains the discrete denoiser and writes it as a checkpoint.
disc::PretrainReport run_pretrain(const ExperimentConfig& cfg, const std::string& out_dir);

// Empirical TV between resampled successors of xt at step t and the exact
// soft policy, over `repeats` independent E-step draws.
double resample_tv(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                   const softq::ExactSoftTables& tables, const rewards::RewardSpec& reward,
                   const estep::EStepConfig& cfg, const disc::Tokens& xt, int t, int repeats,
                   std::uint64_t seed);

// One text line per sample: characters for sequences, coordinates for vectors.
std::string sample_line(const disc::Tokens& x, const std::string& alphabet);
std::string sample_line(const num::Vec& x);

}  // namespace davlab::exp
