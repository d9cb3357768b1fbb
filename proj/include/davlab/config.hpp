#pragma once

// Experiment configuration: JSON in, fully resolved record out. Missing keys
// take per-world defaults; cross-field problems raise ConfigError before any
// compute starts.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "davlab/continuous.hpp"
#include "davlab/discrete.hpp"
#include "davlab/estep.hpp"
#include "davlab/mstep.hpp"
#include "davlab/rewards.hpp"

namespace davlab::config {

using json = nlohmann::json;

enum class World { continuous, discrete };
enum class Algorithm { dav, dav_kl, search_and_distill, reweight };
enum class Guide { pretrained, current };
enum class ElboMode { auto_select, exact, surrogate };

std::string to_string(World w);
std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct ContinuousWorld {
  int dim = 2;
  int T = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  bool beta_rescale = true;
  cont::VarianceMode variance = cont::VarianceMode::analytic;
  std::vector<std::size_t> hidden{32, 32};
  num::Activation activation = num::Activation::tanh;
  cont::GaussianMixture mixture;
};

struct PretrainSpec {
  int epochs = 400;
  double lr = 0.05;
  int batch = 64;
  int dataset_size = 2000;
  int heldout_size = 500;
  std::uint64_t seed = 1234;
};

struct DiscreteWorld {
  int L = 2;
  int K = 2;
  int T = 3;
  std::string alphabet = "AB";
  disc::DenoiserKind denoiser = disc::DenoiserKind::tabular;
  std::vector<std::size_t> hidden{64};
  num::Activation activation = num::Activation::tanh;
  disc::SequenceDistribution data;
  PretrainSpec pretrain;
  std::string pretrained_checkpoint;  // empty: pretrain in process
};

struct EvalSpec {
  int samples = 256;
  int posterior_samples = 64;
  double coverage_radius = 0.0;  // 0: twice the largest component std
  ElboMode elbo = ElboMode::auto_select;
};

struct ExperimentConfig {
  World world = World::discrete;
  Algorithm algorithm = Algorithm::dav;
  Guide guide = Guide::pretrained;
  std::uint64_t seed = 0;
  int epochs = 50;
  int batch = 64;
  int checkpoint_every = 10;
  ContinuousWorld continuous;
  DiscreteWorld discrete;
  rewards::RewardSpec reward;
  estep::EStepConfig estep;
  mstep::MStepConfig mstep;
  EvalSpec eval;

  bool exact_elbo() const;
  void validate() const;
};

ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::string& path);
json to_json(const ExperimentConfig& cfg);
// FNV-1a over the canonical JSON dump of the resolved config.
std::uint64_t config_hash(const ExperimentConfig& cfg);

sched::ContinuousSchedule build_continuous_schedule(const ContinuousWorld& w);

}  // namespace davlab::config
