#include "davlab/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "davlab/errors.hpp"

namespace davlab::config {

std::string to_string(World w) { return w == World::continuous ? "continuous" : "discrete"; }

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::dav: return "dav";
    case Algorithm::dav_kl: return "dav_kl";
    case Algorithm::search_and_distill: return "search_and_distill";
    case Algorithm::reweight: return "reweight";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dav") return Algorithm::dav;
  if (s == "dav_kl") return Algorithm::dav_kl;
  if (s == "search_and_distill") return Algorithm::search_and_distill;
  if (s == "reweight") return Algorithm::reweight;
  throw ConfigError("unknown algorithm '" + s + "'");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

num::Vec vec_of(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected an array of numbers");
  num::Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json vec_json(const num::Vec& v) { return json(v.values()); }

cont::GaussianMixture default_mixture() {
  cont::GaussianMixture m;
  m.weights = {0.25, 0.25, 0.25, 0.25};
  m.means = {num::Vec{2.0, 2.0}, num::Vec{-2.0, 2.0}, num::Vec{-2.0, -2.0}, num::Vec{2.0, -2.0}};
  m.stds = {0.25, 0.25, 0.25, 0.25};
  return m;
}

disc::Tokens tokens_of(const std::string& s, const std::string& alphabet) {
  disc::Tokens t = disc::parse_tokens(s, alphabet);
  for (int tok : t) {
    if (tok == disc::kMask) throw ConfigError("MASK ('?') is not allowed in '" + s + "'");
  }
  return t;
}

rewards::RewardSpec parse_reward(const json& j, const ExperimentConfig& cfg) {
  rewards::RewardSpec r;
  const bool cont_world = cfg.world == World::continuous;
  const std::string default_kind = cont_world ? "mode_preference" : "motif_count";
  if (!j.is_null()) {
    reject_unknown(j, {"kind", "name", "differentiable", "scale", "coef", "goal", "centers", "amplitudes", "tau",
                       "motif", "token", "value"},
                   "reward");
  }
  const json& src = j.is_null() ? json::object() : j;
  r.kind = rewards::kind_from_string(get<std::string>(src, "kind", default_kind));
  r.name = get<std::string>(src, "name", rewards::to_string(r.kind));
  r.differentiable = get<bool>(src, "differentiable", true);
  r.scale = get<double>(src, "scale", 1.0);
  r.tau = get<double>(src, "tau", 0.5);
  r.value = get<double>(src, "value", 0.0);
  if (src.contains("coef")) r.coef = vec_of(src["coef"], "reward.coef");
  if (src.contains("goal")) r.goal = vec_of(src["goal"], "reward.goal");
  if (src.contains("centers")) {
    for (const auto& c : src["centers"]) r.centers.push_back(vec_of(c, "reward.centers"));
  } else if (r.kind == rewards::RewardKind::mode_preference) {
    r.centers = cfg.continuous.mixture.means;
  }
  if (src.contains("amplitudes")) {
    r.amplitudes = src["amplitudes"].get<std::vector<double>>();
  } else if (r.kind == rewards::RewardKind::mode_preference) {
    r.amplitudes.assign(r.centers.size(), 1.0);
    if (r.amplitudes.size() == 4) r.amplitudes[3] = 0.5;
  }
  if (!cont_world) {
    r.motif = tokens_of(get<std::string>(src, "motif", cfg.discrete.alphabet.substr(0, 2)), cfg.discrete.alphabet);
    const std::string tok = get<std::string>(src, "token", cfg.discrete.alphabet.substr(0, 1));
    const disc::Tokens tt = tokens_of(tok, cfg.discrete.alphabet);
    if (tt.size() != 1) throw ConfigError("reward.token must be a single character");
    r.token = tt[0];
  }
  return r;
}

}  // namespace

bool ExperimentConfig::exact_elbo() const {
  if (eval.elbo == ElboMode::surrogate || world != World::discrete) return false;
  if (eval.elbo == ElboMode::exact) return true;
  std::size_t n = 1;
  for (int i = 0; i < discrete.L; ++i) {
    n *= static_cast<std::size_t>(discrete.K + 1);
    if (n > Tolerances::kEnumerationCap) return false;
  }
  return true;
}

ExperimentConfig parse_config(const json& j) {
  reject_unknown(j, {"world", "algorithm", "guide", "seed", "epochs", "batch", "checkpoint_every", "alpha", "gamma",
                     "particles", "guidance", "stop_grad_x0hat", "mstep", "eval", "reward", "continuous", "discrete",
                     "description"},
                 "config");
  ExperimentConfig c;
  const std::string world = get<std::string>(j, "world", "discrete");
  if (world == "continuous") {
    c.world = World::continuous;
  } else if (world == "discrete") {
    c.world = World::discrete;
  } else {
    throw ConfigError("world must be 'continuous' or 'discrete'");
  }
  const bool cw = c.world == World::continuous;
  c.algorithm = algorithm_from_string(get<std::string>(j, "algorithm", "dav"));
  const std::string guide = get<std::string>(j, "guide", "pretrained");
  if (guide != "pretrained" && guide != "current") throw ConfigError("guide must be 'pretrained' or 'current'");
  c.guide = guide == "current" ? Guide::current : Guide::pretrained;
  c.seed = get<std::uint64_t>(j, "seed", 0);
  c.epochs = get<int>(j, "epochs", 50);
  c.batch = get<int>(j, "batch", 64);
  c.checkpoint_every = get<int>(j, "checkpoint_every", 10);

  if (cw) {
    const json& w = j.contains("continuous") ? j["continuous"] : json::object();
    reject_unknown(w, {"dim", "T", "beta_min", "beta_max", "beta_rescale", "variance", "hidden", "activation",
                       "mixture"},
                   "continuous");
    auto& cwld = c.continuous;
    cwld.T = get<int>(w, "T", 50);
    cwld.beta_min = get<double>(w, "beta_min", 1e-4);
    cwld.beta_max = get<double>(w, "beta_max", 0.02);
    cwld.beta_rescale = get<bool>(w, "beta_rescale", true);
    const std::string var = get<std::string>(w, "variance", "analytic");
    if (var == "analytic") {
      cwld.variance = cont::VarianceMode::analytic;
    } else if (var == "ddpm_posterior") {
      cwld.variance = cont::VarianceMode::ddpm_posterior;
    } else {
      throw ConfigError("continuous.variance must be 'analytic' or 'ddpm_posterior'");
    }
    cwld.hidden = get<std::vector<std::size_t>>(w, "hidden", {32, 32});
    cwld.activation = num::activation_from_string(get<std::string>(w, "activation", "tanh"));
    if (w.contains("mixture")) {
      const json& m = w["mixture"];
      reject_unknown(m, {"weights", "means", "stds"}, "continuous.mixture");
      cwld.mixture.weights = m.at("weights").get<std::vector<double>>();
      for (const auto& mu : m.at("means")) cwld.mixture.means.push_back(vec_of(mu, "mixture.means"));
      cwld.mixture.stds = m.at("stds").get<std::vector<double>>();
    } else {
      cwld.mixture = default_mixture();
    }
    cwld.dim = get<int>(w, "dim", cwld.mixture.dim());
  } else {
    const json& w = j.contains("discrete") ? j["discrete"] : json::object();
    reject_unknown(w, {"L", "K", "T", "alphabet", "denoiser", "hidden", "activation", "data", "pretrain",
                       "pretrained_checkpoint"},
                   "discrete");
    auto& d = c.discrete;
    d.L = get<int>(w, "L", 2);
    d.T = get<int>(w, "T", 3);
    d.alphabet = get<std::string>(w, "alphabet", "AB");
    d.K = get<int>(w, "K", static_cast<int>(d.alphabet.size()));
    const std::string den = get<std::string>(w, "denoiser", "tabular");
    if (den == "tabular") {
      d.denoiser = disc::DenoiserKind::tabular;
    } else if (den == "mlp") {
      d.denoiser = disc::DenoiserKind::mlp;
    } else {
      throw ConfigError("discrete.denoiser must be 'tabular' or 'mlp'");
    }
    d.hidden = get<std::vector<std::size_t>>(w, "hidden", {64});
    d.activation = num::activation_from_string(get<std::string>(w, "activation", "tanh"));
    d.pretrained_checkpoint = get<std::string>(w, "pretrained_checkpoint", "");
    if (w.contains("data")) {
      const json& data = w["data"];
      reject_unknown(data, {"support", "weights"}, "discrete.data");
      for (const auto& s : data.at("support")) d.data.support.push_back(tokens_of(s.get<std::string>(), d.alphabet));
      d.data.weights = get<std::vector<double>>(data, "weights", std::vector<double>(d.data.support.size(), 1.0));
    } else {
      // every sequence, weighted against the first token
      for (std::size_t i = 0, n = static_cast<std::size_t>(std::pow(d.K, d.L)); i < n; ++i) {
        disc::Tokens t(static_cast<std::size_t>(d.L));
        std::size_t idx = i;
        for (int l = 0; l < d.L; ++l) {
          t[l] = static_cast<int>(idx % static_cast<std::size_t>(d.K));
          idx /= static_cast<std::size_t>(d.K);
        }
        double w8 = 1.0;
        for (int tok : t) w8 *= tok == 0 ? 0.5 : 1.0;
        d.data.support.push_back(t);
        d.data.weights.push_back(w8);
      }
    }
    const json& p = w.contains("pretrain") ? w["pretrain"] : json::object();
    reject_unknown(p, {"epochs", "lr", "batch", "dataset_size", "heldout_size", "seed"}, "discrete.pretrain");
    d.pretrain.epochs = get<int>(p, "epochs", 400);
    d.pretrain.lr = get<double>(p, "lr", 0.05);
    d.pretrain.batch = get<int>(p, "batch", 64);
    d.pretrain.dataset_size = get<int>(p, "dataset_size", 2000);
    d.pretrain.heldout_size = get<int>(p, "heldout_size", 500);
    d.pretrain.seed = get<std::uint64_t>(p, "seed", 1234);
  }

  c.reward = parse_reward(j.contains("reward") ? j["reward"] : json(), c);

  c.estep.soft.alpha = get<double>(j, "alpha", cw ? 0.005 : 0.01);
  c.estep.soft.gamma = get<double>(j, "gamma", cw ? 0.9 : 1.0);
  c.estep.particles = get<int>(j, "particles", cw ? 4 : 10);
  c.estep.guidance = get<bool>(j, "guidance", c.reward.differentiable);
  c.estep.stop_grad_x0hat = get<bool>(j, "stop_grad_x0hat", false);

  const json& m = j.contains("mstep") ? j["mstep"] : json::object();
  reject_unknown(m, {"lr", "steps", "lambda", "beta1", "beta2", "eps", "kl_gamma_weighted"}, "mstep");
  c.mstep.lr = get<double>(m, "lr", 1e-3);
  c.mstep.steps = get<int>(m, "steps", cw ? 1 : 2);
  c.mstep.lambda = get<double>(m, "lambda", c.algorithm == Algorithm::dav_kl ? 0.01 : 0.0);
  c.mstep.beta1 = get<double>(m, "beta1", 0.9);
  c.mstep.beta2 = get<double>(m, "beta2", 0.999);
  c.mstep.eps = get<double>(m, "eps", 1e-8);
  c.mstep.kl_gamma_weighted = get<bool>(m, "kl_gamma_weighted", false);
  c.mstep.gamma = c.estep.soft.gamma;

  const json& e = j.contains("eval") ? j["eval"] : json::object();
  reject_unknown(e, {"samples", "posterior_samples", "coverage_radius", "elbo"}, "eval");
  c.eval.samples = get<int>(e, "samples", 256);
  c.eval.posterior_samples = get<int>(e, "posterior_samples", 64);
  c.eval.coverage_radius = get<double>(e, "coverage_radius", 0.0);
  const std::string elbo = get<std::string>(e, "elbo", "auto");
  if (elbo == "auto") {
    c.eval.elbo = ElboMode::auto_select;
  } else if (elbo == "exact") {
    c.eval.elbo = ElboMode::exact;
  } else if (elbo == "surrogate") {
    c.eval.elbo = ElboMode::surrogate;
  } else {
    throw ConfigError("eval.elbo must be 'auto', 'exact' or 'surrogate'");
  }
  if (c.continuous.mixture.stds.size() > 0 && c.eval.coverage_radius == 0.0) {
    double s = 0.0;
    for (double sd : c.continuous.mixture.stds) s = std::max(s, sd);
    c.eval.coverage_radius = 2.0 * s;
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (eval.samples < 1) throw ConfigError("eval.samples must be >= 1");
  if (eval.posterior_samples < 1) throw ConfigError("eval.posterior_samples must be >= 1");
  reward.validate();
  estep.validate(reward);
  mstep.validate();
  if (algorithm != Algorithm::dav_kl && mstep.lambda != 0.0) {
    throw ConfigError("mstep.lambda is only meaningful with algorithm 'dav_kl'");
  }
  if (world == World::continuous) {
    const auto& w = continuous;
    w.mixture.validate();
    if (w.dim != w.mixture.dim()) throw ConfigError("continuous.dim does not match the mixture means");
    build_continuous_schedule(w);
    if (reward.domain() != rewards::Domain::continuous && reward.kind != rewards::RewardKind::constant) {
      throw ConfigError("reward '" + rewards::to_string(reward.kind) + "' needs a discrete world");
    }
    const auto dim = static_cast<std::size_t>(w.dim);
    if (reward.kind == rewards::RewardKind::linear && reward.coef.size() != dim) {
      throw ConfigError("reward.coef must have the world dimension");
    }
    if (reward.kind == rewards::RewardKind::neg_sq_dist && reward.goal.size() != dim) {
      throw ConfigError("reward.goal must have the world dimension");
    }
    for (const auto& c : reward.centers) {
      if (c.size() != dim) throw ConfigError("reward.centers must have the world dimension");
    }
    if (eval.elbo == ElboMode::exact) throw OracleUnavailable("exact ELBO needs an enumerable discrete world");
  } else {
    const auto& d = discrete;
    if (d.L < 1) throw ConfigError("discrete.L must be >= 1");
    if (d.K < 1 || d.K != static_cast<int>(d.alphabet.size())) {
      throw ConfigError("discrete.K must equal the alphabet size");
    }
    if (d.alphabet.find('?') != std::string::npos) throw ConfigError("'?' is reserved for MASK");
    sched::make_discrete_schedule(d.T);
    d.data.validate(d.L, d.K);
    if (reward.domain() != rewards::Domain::discrete && reward.kind != rewards::RewardKind::constant) {
      throw ConfigError("reward '" + rewards::to_string(reward.kind) + "' needs a continuous world");
    }
    if (reward.kind == rewards::RewardKind::composition && reward.token >= d.K) {
      throw ConfigError("reward.token outside the alphabet");
    }
    if (d.denoiser == disc::DenoiserKind::tabular) disc::state_space_size(d.L, d.K);
    if (eval.elbo == ElboMode::exact) disc::state_space_size(d.L, d.K);
    if (d.pretrain.epochs < 0 || d.pretrain.dataset_size < 1 || d.pretrain.heldout_size < 0) {
      throw ConfigError("discrete.pretrain: invalid sizes");
    }
  }
}

sched::ContinuousSchedule build_continuous_schedule(const ContinuousWorld& w) {
  double lo = w.beta_min;
  double hi = w.beta_max;
  if (w.beta_rescale) {
    const double f = 1000.0 / static_cast<double>(w.T);
    lo *= f;
    hi *= f;
    if (!(hi < 1.0)) {
      throw ConfigError("continuous: rescaled beta_max >= 1; raise T or set beta_rescale to false");
    }
  }
  return sched::make_continuous_schedule(w.T, lo, hi);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["world"] = to_string(c.world);
  j["algorithm"] = to_string(c.algorithm);
  j["guide"] = c.guide == Guide::current ? "current" : "pretrained";
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["checkpoint_every"] = c.checkpoint_every;
  j["alpha"] = c.estep.soft.alpha;
  j["gamma"] = c.estep.soft.gamma;
  j["particles"] = c.estep.particles;
  j["guidance"] = c.estep.guidance;
  j["stop_grad_x0hat"] = c.estep.stop_grad_x0hat;
  j["mstep"] = {{"lr", c.mstep.lr},       {"steps", c.mstep.steps}, {"lambda", c.mstep.lambda},
                {"beta1", c.mstep.beta1}, {"beta2", c.mstep.beta2}, {"eps", c.mstep.eps},
                {"kl_gamma_weighted", c.mstep.kl_gamma_weighted}};
  const char* elbo = c.eval.elbo == ElboMode::exact ? "exact" : c.eval.elbo == ElboMode::surrogate ? "surrogate" : "auto";
  j["eval"] = {{"samples", c.eval.samples},
               {"posterior_samples", c.eval.posterior_samples},
               {"coverage_radius", c.eval.coverage_radius},
               {"elbo", elbo}};
  json r;
  r["kind"] = rewards::to_string(c.reward.kind);
  r["name"] = c.reward.name;
  r["differentiable"] = c.reward.differentiable;
  r["scale"] = c.reward.scale;
  r["tau"] = c.reward.tau;
  r["value"] = c.reward.value;
  if (!c.reward.coef.empty()) r["coef"] = vec_json(c.reward.coef);
  if (!c.reward.goal.empty()) r["goal"] = vec_json(c.reward.goal);
  if (!c.reward.centers.empty()) {
    r["centers"] = json::array();
    for (const auto& v : c.reward.centers) r["centers"].push_back(vec_json(v));
    r["amplitudes"] = c.reward.amplitudes;
  }
  if (c.world == World::continuous) {
    const auto& w = c.continuous;
    json m;
    m["weights"] = w.mixture.weights;
    m["means"] = json::array();
    for (const auto& mu : w.mixture.means) m["means"].push_back(vec_json(mu));
    m["stds"] = w.mixture.stds;
    j["continuous"] = {{"dim", w.dim},
                       {"T", w.T},
                       {"beta_min", w.beta_min},
                       {"beta_max", w.beta_max},
                       {"beta_rescale", w.beta_rescale},
                       {"variance", w.variance == cont::VarianceMode::analytic ? "analytic" : "ddpm_posterior"},
                       {"hidden", w.hidden},
                       {"activation", num::to_string(w.activation)},
                       {"mixture", m}};
  } else {
    const auto& d = c.discrete;
    r["motif"] = disc::to_string(c.reward.motif, d.alphabet);
    r["token"] = disc::to_string(disc::Tokens{c.reward.token}, d.alphabet);
    json support = json::array();
    for (const auto& s : d.data.support) support.push_back(disc::to_string(s, d.alphabet));
    j["discrete"] = {{"L", d.L},
                     {"K", d.K},
                     {"T", d.T},
                     {"alphabet", d.alphabet},
                     {"denoiser", d.denoiser == disc::DenoiserKind::tabular ? "tabular" : "mlp"},
                     {"hidden", d.hidden},
                     {"activation", num::to_string(d.activation)},
                     {"pretrained_checkpoint", d.pretrained_checkpoint},
                     {"data", {{"support", support}, {"weights", d.data.weights}}},
                     {"pretrain",
                      {{"epochs", d.pretrain.epochs},
                       {"lr", d.pretrain.lr},
                       {"batch", d.pretrain.batch},
                       {"dataset_size", d.pretrain.dataset_size},
                       {"heldout_size", d.pretrain.heldout_size},
                       {"seed", d.pretrain.seed}}}};
  }
  j["reward"] = r;
  return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace davlab::config
