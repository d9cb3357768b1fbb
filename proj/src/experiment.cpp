#include "davlab/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "davlab/errors.hpp"
#include "davlab/estep.hpp"
#include "davlab/mstep.hpp"
#include "davlab/softq.hpp"

namespace davlab::exp {

namespace fs = std::filesystem;
using config::Algorithm;
using json = nlohmann::json;

namespace {

// Stream tags; per-epoch streams are split off these by epoch index.
constexpr std::uint64_t kEStepStream = 0xe5e9;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kDataStream = 0xda7a;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
}

constexpr int kRecordFields = 13;

void pack_record(const eval::ElboRecord& r, std::vector<double>& out) {
  out.insert(out.end(), {static_cast<double>(r.epoch), r.elbo,
                         r.estimator == eval::Estimator::exact_tabular ? 0.0 : 1.0, static_cast<double>(r.samples),
                         r.mean_reward, r.reward_std, r.diversity, r.mode_coverage, r.posterior_mean_reward,
                         r.weight_entropy, static_cast<double>(r.fallback_count), r.loss_before, r.loss_after});
}

eval::ElboRecord unpack_record(const double* p) {
  eval::ElboRecord r;
  r.epoch = static_cast<int>(p[0]);
  r.elbo = p[1];
  r.estimator = p[2] == 0.0 ? eval::Estimator::exact_tabular : eval::Estimator::surrogate_is;
  r.samples = static_cast<int>(p[3]);
  r.mean_reward = p[4];
  r.reward_std = p[5];
  r.diversity = p[6];
  r.mode_coverage = p[7];
  r.posterior_mean_reward = p[8];
  r.weight_entropy = p[9];
  r.fallback_count = static_cast<int>(p[10]);
  r.loss_before = p[11];
  r.loss_after = p[12];
  return r;
}

// --- world adapters -------------------------------------------------------

using ContBatch = std::vector<Trajectory<num::Vec>>;
using DiscBatch = std::vector<Trajectory<disc::SeqState>>;

ContBatch posterior_batch(const ExperimentConfig& cfg, const cont::ContinuousPolicy& search,
                          const cont::ContinuousPolicy&, const num::RngStream& rng, int n) {
  return estep::estep_batch(search, cfg.reward, cfg.estep, rng, n);
}

DiscBatch posterior_batch(const ExperimentConfig& cfg, const disc::DiscretePolicy& search,
                          const disc::DiscretePolicy& guide, const num::RngStream& rng, int n) {
  return estep::estep_batch(search, guide, cfg.reward, cfg.estep, rng, n);
}

template <class Policy>
auto prior_batch(const ExperimentConfig& cfg, const Policy& policy, const num::RngStream& rng, int n) {
  auto batch = disc::rollout(policy, rng, n);
  for (auto& tr : batch) tr.reward = rewards::reward_value(cfg.reward, tr.terminal().tokens);
  return batch;
}

template <>
auto prior_batch(const ExperimentConfig& cfg, const cont::ContinuousPolicy& policy, const num::RngStream& rng, int n) {
  auto batch = cont::rollout(policy, rng, n);
  for (auto& tr : batch) tr.reward = rewards::reward_value(cfg.reward, tr.terminal());
  return batch;
}

const num::Vec& terminal_of(const Trajectory<num::Vec>& tr) { return tr.terminal(); }
const disc::Tokens& terminal_of(const Trajectory<disc::SeqState>& tr) { return tr.terminal().tokens; }

template <class Batch>
auto terminals(const Batch& b) {
  std::vector<std::decay_t<decltype(terminal_of(b.front()))>> out;
  for (const auto& tr : b) out.push_back(terminal_of(tr));
  return out;
}

std::string line_of(const ExperimentConfig&, const num::Vec& x) { return sample_line(x); }
std::string line_of(const ExperimentConfig& cfg, const disc::Tokens& x) {
  return sample_line(x, cfg.discrete.alphabet);
}

void sample_metrics(const ExperimentConfig& cfg, const ContBatch& b, eval::ElboRecord& r) {
  const auto xs = terminals(b);
  if (xs.size() >= 2) r.diversity = eval::diversity(xs);
  r.mode_coverage = eval::mode_coverage(xs, cfg.continuous.mixture, cfg.eval.coverage_radius);
}

void sample_metrics(const ExperimentConfig&, const DiscBatch& b, eval::ElboRecord& r) {
  const auto xs = terminals(b);
  if (xs.size() >= 2) r.diversity = eval::diversity(xs);
}

double elbo_of(const ExperimentConfig& cfg, const cont::ContinuousPolicy& policy, const ContBatch& d,
               eval::ElboRecord& r) {
  r.estimator = eval::Estimator::surrogate_is;
  r.samples = static_cast<int>(d.size());
  return eval::elbo_surrogate(policy, d, cfg.estep.soft);
}

double elbo_of(const ExperimentConfig& cfg, const disc::DiscretePolicy& policy, const DiscBatch& d,
               eval::ElboRecord& r) {
  if (cfg.exact_elbo()) {
    r.estimator = eval::Estimator::exact_tabular;
    r.samples = 0;
    const softq::ExactSoftTables tables(policy, cfg.reward, cfg.estep.soft);
    return eval::elbo_exact_tabular(policy, tables);
  }
  r.estimator = eval::Estimator::surrogate_is;
  r.samples = static_cast<int>(d.size());
  return eval::elbo_surrogate(policy, d, cfg.estep.soft);
}

struct LoopState {
  std::vector<eval::ElboRecord> records;
  int next_epoch = 0;
};

template <class Policy>
ckpt::Checkpoint make_checkpoint(const ExperimentConfig& cfg, const Policy& policy, const Policy& anchor,
                                 const num::Adam& opt, const LoopState& st) {
  ckpt::Checkpoint ck;
  ck.config_hash = config::config_hash(cfg);
  ck.meta["kind"] = "run";
  ck.meta["config"] = config::to_json(cfg);
  ck.meta["next_epoch"] = st.next_epoch;
  ck.meta["policy_version"] = policy.version;
  ck.meta["anchor_version"] = anchor.version;
  ck.meta["adam_steps"] = opt.steps();
  ck.meta["rng"] = {{"seed", cfg.seed}, {"estep_stream", kEStepStream}, {"eval_stream", kEvalStream}};
  ck.arrays["theta"] = policy.params();
  ck.arrays["theta0"] = anchor.params();
  ck.arrays["adam_m"] = opt.first_moment();
  ck.arrays["adam_v"] = opt.second_moment();
  std::vector<double> recs;
  for (const auto& r : st.records) pack_record(r, recs);
  ck.arrays["records"] = recs;
  return ck;
}

void load_into(std::vector<double>& dst, const std::vector<double>& src, const char* what) {
  if (dst.size() != src.size()) {
    throw CheckpointError(std::string("checkpoint array '") + what + "' has the wrong length");
  }
  dst = src;
}

template <class Policy>
RunResult em_loop(const ExperimentConfig& cfg, Policy policy, const RunOptions& opts) {
  Policy anchor = policy;
  num::Adam opt(policy.params().size(), cfg.mstep.adam());
  LoopState st;

  if (!opts.resume.empty()) {
    const ckpt::Checkpoint ck = ckpt::load(opts.resume);
    if (ck.meta.value("kind", "") != "run") throw CheckpointError("'" + opts.resume + "' is not a run checkpoint");
    if (ck.config_hash != config::config_hash(cfg)) {
      throw CheckpointError("checkpoint config hash differs from the current config (seed or settings changed)");
    }
    load_into(policy.params(), ck.array("theta"), "theta");
    load_into(anchor.params(), ck.array("theta0"), "theta0");
    load_into(opt.first_moment(), ck.array("adam_m"), "adam_m");
    load_into(opt.second_moment(), ck.array("adam_v"), "adam_v");
    opt.set_steps(ck.meta.at("adam_steps").get<std::uint64_t>());
    policy.version = ck.meta.at("policy_version").get<std::uint64_t>();
    anchor.version = ck.meta.at("anchor_version").get<std::uint64_t>();
    st.next_epoch = ck.meta.at("next_epoch").get<int>();
    const auto& recs = ck.array("records");
    if (recs.size() % kRecordFields != 0) throw CheckpointError("checkpoint record table is malformed");
    for (std::size_t i = 0; i < recs.size(); i += kRecordFields) st.records.push_back(unpack_record(&recs[i]));
  }

  std::ofstream csv;
  fs::path out;
  if (!opts.out_dir.empty()) {
    out = opts.out_dir;
    fs::create_directories(out);
    write_text(out / "config.resolved.json", config::to_json(cfg).dump(2) + "\n");
    csv.open(out / "metrics.csv", std::ios::binary | std::ios::trunc);
    csv << kCsvHeader << "\n";
    for (const auto& r : st.records) csv << csv_row(r) << "\n";
    csv.flush();
  }

  const num::RngStream estep_base(cfg.seed, kEStepStream);
  const num::RngStream eval_base(cfg.seed, kEvalStream);
  const bool snd = cfg.algorithm == Algorithm::search_and_distill;
  const bool reweight = cfg.algorithm == Algorithm::reweight;
  using Batch = decltype(prior_batch(cfg, policy, estep_base, 1));
  Batch last_posterior;
  Batch last_eval;

  for (int k = st.next_epoch; k <= cfg.epochs; ++k) {
    st.next_epoch = k;
    if (!out.empty() && k % cfg.checkpoint_every == 0) {
      ckpt::save(make_checkpoint(cfg, policy, anchor, opt, st), (out / ("checkpoint_epoch_" + std::to_string(k) + ".dlck")).string());
    }
    if (opts.stop_after >= 0 && k >= opts.stop_after) break;

    eval::ElboRecord rec;
    rec.epoch = k;
    const num::RngStream erng = estep_base.split(static_cast<std::uint64_t>(k));

    // E-step
    Batch D;
    std::vector<double> weights;
    if (reweight) {
      D = prior_batch(cfg, policy, erng, cfg.batch);
      std::vector<double> lw;
      for (const auto& tr : D) lw.push_back(tr.reward / cfg.estep.soft.alpha);
      const num::Vec w = num::softmax(lw);
      weights.assign(w.begin(), w.end());
      double pm = 0.0;
      double h = 0.0;
      for (std::size_t b = 0; b < D.size(); ++b) {
        pm += weights[b] * D[b].reward;
        if (weights[b] > 0.0) h -= weights[b] * std::log(weights[b]);
      }
      rec.posterior_mean_reward = pm;
      rec.weight_entropy = h;
    } else {
      const Policy& search = snd ? anchor : policy;
      const Policy& guide = cfg.guide == config::Guide::pretrained ? anchor : policy;
      D = posterior_batch(cfg, search, guide, erng, cfg.batch);
      double pm = 0.0;
      double h = 0.0;
      std::size_t nsteps = 0;
      for (const auto& tr : D) {
        pm += tr.reward;
        for (const auto& s : tr.steps) {
          h += s.weight_entropy;
          ++nsteps;
          rec.fallback_count += s.fallback ? 1 : 0;
        }
      }
      rec.posterior_mean_reward = pm / static_cast<double>(D.size());
      rec.weight_entropy = nsteps ? h / static_cast<double>(nsteps) : 0.0;
    }

    // amortized samples of θ_k
    const Batch E = prior_batch(cfg, policy, eval_base.split(static_cast<std::uint64_t>(k)), cfg.eval.samples);
    std::vector<double> rs;
    for (const auto& tr : E) rs.push_back(tr.reward);
    const auto stats = eval::reward_stats(rs);
    rec.mean_reward = stats.mean;
    rec.reward_std = stats.std;
    sample_metrics(cfg, E, rec);
    rec.elbo = elbo_of(cfg, policy, D, rec);

    // M-step
    if (k < cfg.epochs) {
      const std::optional<std::uint64_t> expected = snd ? std::nullopt : std::optional<std::uint64_t>(policy.version);
      try {
        const auto rep = mstep::mstep_update(policy, anchor, D, cfg.mstep, opt, expected,
                                             reweight ? &weights : nullptr);
        rec.loss_before = rep.loss_before;
        rec.loss_after = rep.loss_after;
      } catch (const NumericError& e) {
        if (!out.empty()) {
          write_text(out / "abort.txt", "epoch " + std::to_string(k) + ": " + e.what() +
                                            "\nlast good checkpoint retained in this directory\n");
        }
        throw;
      }
    }

    st.records.push_back(rec);
    if (csv.is_open()) {
      csv << csv_row(rec) << "\n";
      csv.flush();
    }
    if (opts.verbose) {
      std::cerr << "epoch " << k << " elbo=" << fmt(rec.elbo) << " reward=" << fmt(rec.mean_reward)
                << " posterior=" << fmt(rec.posterior_mean_reward) << "\n";
    }
    last_posterior = std::move(D);
    last_eval = E;
    st.next_epoch = k + 1;
  }

  const bool finished = st.next_epoch > cfg.epochs;
  if (!out.empty() && finished) {
    ckpt::save(make_checkpoint(cfg, policy, anchor, opt, st), (out / "checkpoint_final.dlck").string());
    std::string amort;
    for (const auto& x : terminals(last_eval)) amort += line_of(cfg, x) + "\n";
    write_text(out / "samples_amortized.txt", amort);
    std::string post;
    for (const auto& x : terminals(last_posterior)) post += line_of(cfg, x) + "\n";
    write_text(out / "samples_posterior.txt", post);
  }

  RunResult res;
  res.records = st.records;
  res.csv = std::string(kCsvHeader) + "\n";
  for (const auto& r : st.records) res.csv += csv_row(r) + "\n";
  res.theta = policy.params();
  res.theta0 = anchor.params();
  return res;
}

}  // namespace

std::string csv_row(const eval::ElboRecord& r) {
  std::string s = std::to_string(r.epoch);
  s += "," + eval::to_string(r.estimator);
  for (double v : {r.elbo, r.mean_reward, r.reward_std, r.diversity, r.mode_coverage, r.posterior_mean_reward,
                   r.weight_entropy}) {
    s += "," + fmt(v);
  }
  s += "," + std::to_string(r.fallback_count);
  s += "," + fmt(r.loss_before) + "," + fmt(r.loss_after);
  s += "," + std::to_string(r.samples);
  return s;
}

std::string sample_line(const disc::Tokens& x, const std::string& alphabet) { return disc::to_string(x, alphabet); }

std::string sample_line(const num::Vec& x) {
  std::string s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i) s += ' ';
    s += fmt(x[i]);
  }
  return s;
}

cont::ContinuousPolicy build_continuous(const ExperimentConfig& cfg) {
  if (cfg.world != config::World::continuous) throw ConfigError("build_continuous: config world is discrete");
  const auto& w = cfg.continuous;
  num::RngStream init(cfg.seed, kInitStream);
  num::Mlp residual = cont::make_residual(w.dim, w.hidden, w.activation, init);
  return cont::ContinuousPolicy(config::build_continuous_schedule(w), w.mixture, std::move(residual), w.variance);
}

disc::DiscretePolicy build_discrete(const ExperimentConfig& cfg, disc::PretrainReport* report) {
  if (cfg.world != config::World::discrete) throw ConfigError("build_discrete: config world is continuous");
  const auto& d = cfg.discrete;
  disc::DiscreteDenoiser den;
  if (d.denoiser == disc::DenoiserKind::tabular) {
    den = disc::DiscreteDenoiser::tabular(d.L, d.K, d.T);
  } else {
    num::RngStream init(d.pretrain.seed, kInitStream);
    den = disc::DiscreteDenoiser::mlp(d.L, d.K, d.T, d.hidden, d.activation, init);
  }
  disc::DiscretePolicy policy(sched::make_discrete_schedule(d.T), std::move(den));
  if (!d.pretrained_checkpoint.empty()) {
    const ckpt::Checkpoint ck = ckpt::load(d.pretrained_checkpoint);
    if (ck.meta.value("kind", "") != "pretrained_denoiser") {
      throw CheckpointError("'" + d.pretrained_checkpoint + "' is not a pretrained denoiser checkpoint");
    }
    if (ck.meta.value("L", -1) != d.L || ck.meta.value("K", -1) != d.K || ck.meta.value("T", -1) != d.T) {
      throw CheckpointError("pretrained denoiser shape (L, K, T) differs from the config");
    }
    load_into(policy.params(), ck.array("theta"), "theta");
    return policy;
  }
  num::RngStream data_rng(d.pretrain.seed, kDataStream);
  const auto train = disc::sample_dataset(d.data, d.pretrain.dataset_size, data_rng);
  const auto held = disc::sample_dataset(d.data, d.pretrain.heldout_size, data_rng);
  disc::PretrainConfig pc;
  pc.epochs = d.pretrain.epochs;
  pc.lr = d.pretrain.lr;
  pc.batch = d.pretrain.batch;
  pc.seed = d.pretrain.seed;
  const auto rep = disc::pretrain_discrete(policy, train, held, pc);
  if (report) *report = rep;
  return policy;
}

RunResult run_align(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (cfg.world == config::World::continuous) return em_loop(cfg, build_continuous(cfg), opts);
  disc::PretrainReport rep;
  RunResult res = em_loop(cfg, build_discrete(cfg, &rep), opts);
  res.pretrain_heldout_before = rep.heldout_loss_before;
  res.pretrain_heldout_after = rep.heldout_loss_after;
  return res;
}

RunResult run_ablation(Algorithm variant, ExperimentConfig cfg, const RunOptions& opts) {
  if (variant != Algorithm::dav_kl) {
    cfg.mstep.lambda = 0.0;
  } else if (cfg.algorithm != Algorithm::dav_kl) {
    cfg.mstep.lambda = 0.01;
  }
  cfg.algorithm = variant;
  return run_align(cfg, opts);
}

// --- eval -------------------------------------------------------------------

namespace {

template <class Policy>
EvalResult eval_policy(const ExperimentConfig& cfg, const Policy& policy, const Policy& anchor, int n,
                       std::uint64_t seed) {
  EvalResult res;
  res.samples = n;
  const auto A = prior_batch(cfg, policy, num::RngStream(seed, kEvalStream), n);
  const Policy& guide = cfg.guide == config::Guide::pretrained ? anchor : policy;
  const auto P = posterior_batch(cfg, policy, guide, num::RngStream(seed, kEStepStream), n);
  std::vector<double> ra;
  std::vector<double> rp;
  for (const auto& tr : A) ra.push_back(tr.reward);
  for (const auto& tr : P) rp.push_back(tr.reward);
  const auto sa = eval::reward_stats(ra);
  const auto sp = eval::reward_stats(rp);
  res.amortized_mean_reward = sa.mean;
  res.amortized_reward_std = sa.std;
  res.posterior_mean_reward = sp.mean;
  res.posterior_reward_std = sp.std;
  eval::ElboRecord tmp;
  sample_metrics(cfg, A, tmp);
  res.diversity = tmp.diversity;
  res.mode_coverage = tmp.mode_coverage;
  for (const auto& x : terminals(A)) res.amortized_dump.push_back(line_of(cfg, x));
  for (const auto& x : terminals(P)) res.posterior_dump.push_back(line_of(cfg, x));
  return res;
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

EvalResult run_eval(const std::string& checkpoint_path, int n, std::uint64_t seed, const std::string& out_dir) {
  if (n < 1) throw ConfigError("eval: n must be >= 1");
  const ckpt::Checkpoint ck = ckpt::load(checkpoint_path);
  if (ck.meta.value("kind", "") != "run") throw CheckpointError("'" + checkpoint_path + "' is not a run checkpoint");
  const ExperimentConfig cfg = config::parse_config(ck.meta.at("config"));
  if (config::config_hash(cfg) != ck.config_hash) {
    throw CheckpointError("checkpoint config hash does not match its embedded config (written by another version)");
  }
  EvalResult res;
  if (cfg.world == config::World::continuous) {
    cont::ContinuousPolicy policy = build_continuous(cfg);
    cont::ContinuousPolicy anchor = policy;
    load_into(policy.params(), ck.array("theta"), "theta");
    load_into(anchor.params(), ck.array("theta0"), "theta0");
    res = eval_policy(cfg, policy, anchor, n, seed);
  } else {
    ExperimentConfig c2 = cfg;
    c2.discrete.pretrain.epochs = 0;  // parameters come from the checkpoint
    disc::DiscretePolicy policy = build_discrete(c2);
    disc::DiscretePolicy anchor = policy;
    load_into(policy.params(), ck.array("theta"), "theta");
    load_into(anchor.params(), ck.array("theta0"), "theta0");
    res = eval_policy(cfg, policy, anchor, n, seed);
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json j;
    j["checkpoint"] = checkpoint_path;
    j["samples"] = n;
    j["seed"] = seed;
    j["amortized"] = {{"mean_reward", res.amortized_mean_reward}, {"reward_std", res.amortized_reward_std}};
    j["posterior"] = {{"mean_reward", res.posterior_mean_reward}, {"reward_std", res.posterior_reward_std}};
    j["diversity"] = nan_to_null(res.diversity);
    j["mode_coverage"] = nan_to_null(res.mode_coverage);
    write_text(fs::path(out_dir) / "eval_metrics.json", j.dump(2) + "\n");
    std::string a;
    for (const auto& l : res.amortized_dump) a += l + "\n";
    write_text(fs::path(out_dir) / "eval_samples_amortized.txt", a);
    std::string p;
    for (const auto& l : res.posterior_dump) p += l + "\n";
    write_text(fs::path(out_dir) / "eval_samples_posterior.txt", p);
  }
  return res;
}

// --- oracle -----------------------------------------------------------------

double resample_tv(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& guide,
                   const softq::ExactSoftTables& tables, const rewards::RewardSpec& reward,
                   const estep::EStepConfig& cfg, const disc::Tokens& xt, int t, int repeats, std::uint64_t seed) {
  if (repeats < 1) throw ConfigError("resample_tv: repeats must be >= 1");
  const int K = policy.vocab();
  std::map<std::size_t, double> emp;
  const num::RngStream base(seed, 0x7f);
  for (int r = 0; r < repeats; ++r) {
    num::RngStream rng = base.split(static_cast<std::uint64_t>(r));
    auto ps = estep::propose_discrete(policy, guide, xt, t, reward, cfg, rng);
    try {
      estep::importance_weights(ps, cfg, t);
    } catch (const DegenerateWeights&) {
      ps.weights.assign(ps.size(), 1.0 / static_cast<double>(ps.size()));
    }
    const std::size_t k = estep::resample(ps, rng);
    emp[disc::state_index(ps.states[k], K)] += 1.0 / repeats;
  }
  std::map<std::size_t, double> exact;
  for (const auto& tr : softq::exact_soft_policy(tables, xt, t)) exact[disc::state_index(tr.next, K)] += tr.prob;
  double tv = 0.0;
  for (const auto& [i, p] : exact) tv += std::abs(p - (emp.count(i) ? emp[i] : 0.0));
  for (const auto& [i, p] : emp) {
    if (!exact.count(i)) tv += p;
  }
  return 0.5 * tv;
}

bool OracleReport::ok() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return !checks.empty();
}

std::string OracleReport::text() const {
  std::string s;
  for (const auto& c : checks) s += std::string(c.pass ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
  s += ok() ? "oracle: all checks passed\n" : "oracle: FAILED\n";
  return s;
}

OracleReport run_oracle(const ExperimentConfig& cfg, const OracleOptions& opts, const std::string& out_dir) {
  if (cfg.world != config::World::discrete) throw OracleUnavailable("oracle needs an enumerable discrete world");
  disc::state_space_size(cfg.discrete.L, cfg.discrete.K);
  const disc::DiscretePolicy prior = build_discrete(cfg);
  const auto& reward = cfg.reward;
  softq::ExactSoftTables tables(prior, reward, cfg.estep.soft);
  if (opts.corrupt_table) {
    const disc::Tokens x(static_cast<std::size_t>(cfg.discrete.L), disc::kMask);
    tables.set_V(1, x, tables.V(1, x) + 1.0);
  }
  OracleReport rep;
  auto add = [&](std::string name, bool pass, std::string detail) {
    rep.checks.push_back(OracleCheck{std::move(name), pass, std::move(detail)});
  };
  const int L = cfg.discrete.L;
  const int K = cfg.discrete.K;
  const int T = cfg.discrete.T;

  const double res = softq::bellman_residual(tables);
  add("bellman_self_consistency", res <= Tolerances::kBellman, "max residual " + fmt(res));

  bool term = true;
  for (const auto& x0 : disc::enumerate_states(L, K, 0)) {
    term &= tables.V(0, x0.tokens) == 0.0;
    term &= tables.Q(1, x0.tokens, x0.tokens) == rewards::reward_value(reward, x0.tokens);
  }
  add("terminal_conditions", term, "V*(x_0) = 0 and Q*(x_1, x_0) = r(x_0)");

  double worst_row = 0.0;
  for (int t = 1; t <= T; ++t) {
    for (const auto& st : disc::enumerate_states(L, K, t)) {
      double s = 0.0;
      for (const auto& tr : softq::exact_soft_policy(tables, st.tokens, t)) s += tr.prob;
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
  }
  add("soft_policy_normalized", worst_row <= 1e-12, "max |sum eta* - 1| = " + fmt(worst_row));

  const auto bounds = softq::check_bounds(tables);
  add("value_bounds", bounds.ok(), bounds.summary());

  softq::SoftQConfig g1 = cfg.estep.soft;
  g1.gamma = 1.0;
  const softq::ExactSoftTables t1(prior, reward, g1);
  const double dp = eval::elbo_exact_tabular(prior, t1);
  const double en = eval::elbo_trajectory_enumeration(prior, t1);
  add("elbo_gamma1_reduction", std::abs(dp - en) <= 1e-10, "dp " + fmt(dp) + " vs enumeration " + fmt(en));

  estep::EStepConfig ec = cfg.estep;
  const disc::Tokens x1(static_cast<std::size_t>(L), disc::kMask);
  std::vector<double> tvs;
  std::string detail;
  for (int M : opts.particle_counts) {
    ec.particles = M;
    tvs.push_back(resample_tv(prior, prior, tables, reward, ec, x1, 1, opts.repeats, cfg.seed));
    detail += "M=" + std::to_string(M) + ":" + fmt(tvs.back()) + " ";
  }
  int inversions = 0;
  const double noise = std::sqrt(static_cast<double>(std::pow(K, L)) / opts.repeats);
  for (std::size_t i = 1; i < tvs.size(); ++i) {
    if (tvs[i] > tvs[i - 1]) inversions += tvs[i] > tvs[i - 1] + noise ? 2 : 1;
  }
  add("estep_tv_convergence", tvs.back() < opts.tv_threshold && inversions <= 1, detail);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "oracle_report.txt", rep.text());
  }
  return rep;
}

disc::PretrainReport run_pretrain(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.world != config::World::discrete) {
    throw ConfigError("pretrain applies to the discrete world; the continuous prior is analytic");
  }
  ExperimentConfig c2 = cfg;
  c2.discrete.pretrained_checkpoint.clear();
  disc::PretrainReport rep;
  const disc::DiscretePolicy policy = build_discrete(c2, &rep);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ckpt::Checkpoint ck;
    ck.config_hash = config::config_hash(c2);
    ck.meta["kind"] = "pretrained_denoiser";
    ck.meta["L"] = c2.discrete.L;
    ck.meta["K"] = c2.discrete.K;
    ck.meta["T"] = c2.discrete.T;
    ck.meta["alphabet"] = c2.discrete.alphabet;
    ck.arrays["theta"] = policy.params();
    ckpt::save(ck, (fs::path(out_dir) / "pretrained.dlck").string());
    json j;
    j["epochs"] = rep.epochs;
    j["exact_expectation"] = rep.exact;
    j["train_loss_before"] = rep.train_loss_before;
    j["train_loss_after"] = rep.train_loss_after;
    j["heldout_loss_before"] = rep.heldout_loss_before;
    j["heldout_loss_after"] = rep.heldout_loss_after;
    write_text(fs::path(out_dir) / "pretrain_report.json", j.dump(2) + "\n");
    num::RngStream rng(c2.discrete.pretrain.seed, kEvalStream);
    std::string dump;
    for (const auto& tr : disc::rollout(policy, rng, 256)) dump += sample_line(tr.terminal().tokens, c2.discrete.alphabet) + "\n";
    write_text(fs::path(out_dir) / "samples_pretrained.txt", dump);
  }
  return rep;
}

}  // namespace davlab::exp
