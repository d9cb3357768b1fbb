#include "davlab/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "davlab/errors.hpp"

namespace davlab::disc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

int SeqState::masked_count() const {
  return static_cast<int>(std::count(tokens.begin(), tokens.end(), kMask));
}

std::size_t state_space_size(int L, int K, std::size_t cap) {
  if (L < 1 || K < 1) throw ConfigError("state space: L and K must be >= 1");
  std::size_t n = 1;
  for (int i = 0; i < L; ++i) {
    n *= static_cast<std::size_t>(K + 1);
    if (n > cap) {
      throw OracleUnavailable("state space (K+1)^L exceeds enumeration cap " + std::to_string(cap));
    }
  }
  return n;
}

std::size_t state_index(const Tokens& tokens, int K) {
  std::size_t idx = 0;
  for (std::size_t i = tokens.size(); i-- > 0;) {
    const int tok = tokens[i];
    if (tok != kMask && (tok < 0 || tok >= K)) throw DomainError("state_index: token out of range");
    idx = idx * static_cast<std::size_t>(K + 1) + static_cast<std::size_t>(tok == kMask ? K : tok);
  }
  return idx;
}

Tokens state_from_index(std::size_t index, int L, int K) {
  Tokens out(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    const int digit = static_cast<int>(index % static_cast<std::size_t>(K + 1));
    out[i] = digit == K ? kMask : digit;
    index /= static_cast<std::size_t>(K + 1);
  }
  return out;
}

std::vector<SeqState> enumerate_states(int L, int K, int t, std::size_t cap) {
  const std::size_t n = state_space_size(L, K, cap);
  std::vector<SeqState> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tokens tok = state_from_index(i, L, K);
    if (t == 0 && std::find(tok.begin(), tok.end(), kMask) != tok.end()) continue;
    out.push_back(SeqState{std::move(tok), t});
  }
  return out;
}

std::string to_string(const Tokens& tokens, const std::string& alphabet) {
  std::string s;
  for (int tok : tokens) {
    if (tok == kMask) {
      s.push_back('?');
    } else if (tok >= 0 && tok < static_cast<int>(alphabet.size())) {
      s.push_back(alphabet[static_cast<std::size_t>(tok)]);
    } else {
      throw DomainError("to_string: token outside alphabet");
    }
  }
  return s;
}

Tokens parse_tokens(const std::string& text, const std::string& alphabet) {
  Tokens out;
  for (char c : text) {
    if (c == '?') {
      out.push_back(kMask);
      continue;
    }
    const auto pos = alphabet.find(c);
    if (pos == std::string::npos) throw ConfigError(std::string("character '") + c + "' not in alphabet");
    out.push_back(static_cast<int>(pos));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser

DiscreteDenoiser DiscreteDenoiser::tabular(int L, int K, int T, std::size_t cap) {
  DiscreteDenoiser d;
  d.kind_ = DenoiserKind::tabular;
  d.L_ = L;
  d.K_ = K;
  d.T_ = T;
  d.states_ = state_space_size(L, K, cap);
  d.table_.assign(static_cast<std::size_t>(T) * d.states_ * static_cast<std::size_t>(L * K), 0.0);
  return d;
}

DiscreteDenoiser DiscreteDenoiser::mlp(int L, int K, int T, const std::vector<std::size_t>& hidden,
                                       num::Activation act, RngStream& rng) {
  if (L < 1 || K < 1 || T < 1) throw ConfigError("mlp denoiser: L, K, T must be >= 1");
  DiscreteDenoiser d;
  d.kind_ = DenoiserKind::mlp;
  d.L_ = L;
  d.K_ = K;
  d.T_ = T;
  std::vector<std::size_t> widths;
  widths.push_back(static_cast<std::size_t>(L * (K + 1) + 1));
  for (std::size_t h : hidden) widths.push_back(h);
  widths.push_back(static_cast<std::size_t>(L * K));
  d.net_ = num::Mlp(widths, act);
  d.net_.init(rng, /*zero_final=*/true);
  return d;
}

std::vector<double>& DiscreteDenoiser::params() {
  return kind_ == DenoiserKind::tabular ? table_ : net_.params();
}

const std::vector<double>& DiscreteDenoiser::params() const {
  return kind_ == DenoiserKind::tabular ? table_ : net_.params();
}

std::size_t DiscreteDenoiser::row_offset(const Tokens& xt, int t) const {
  if (t < 1 || t > T_) throw DomainError("denoiser: timestep out of range");
  if (static_cast<int>(xt.size()) != L_) throw DomainError("denoiser: sequence length mismatch");
  const std::size_t idx = state_index(xt, K_);
  return (static_cast<std::size_t>(t - 1) * states_ + idx) * static_cast<std::size_t>(L_ * K_);
}

Vec DiscreteDenoiser::encode(const Tokens& xt, int t) const {
  if (static_cast<int>(xt.size()) != L_) throw DomainError("denoiser: sequence length mismatch");
  Vec in(static_cast<std::size_t>(L_ * (K_ + 1) + 1));
  for (int l = 0; l < L_; ++l) {
    const int tok = xt[l];
    in[static_cast<std::size_t>(l * (K_ + 1) + (tok == kMask ? K_ : tok))] = 1.0;
  }
  in[in.size() - 1] = static_cast<double>(t) / static_cast<double>(T_);
  return in;
}

Mat DiscreteDenoiser::logits(const Tokens& xt, int t) const {
  Mat out(static_cast<std::size_t>(L_), static_cast<std::size_t>(K_));
  if (kind_ == DenoiserKind::tabular) {
    const std::size_t off = row_offset(xt, t);
    std::copy(table_.begin() + static_cast<std::ptrdiff_t>(off),
              table_.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(L_ * K_)),
              out.flat().begin());
  } else {
    const Vec y = net_.forward(encode(xt, t));
    std::copy(y.begin(), y.end(), out.flat().begin());
  }
  return out;
}

Mat DiscreteDenoiser::probs(const Tokens& xt, int t) const {
  Mat out(static_cast<std::size_t>(L_), static_cast<std::size_t>(K_));
  bool any_masked = false;
  for (int tok : xt) any_masked |= tok == kMask;
  Mat lg;
  if (any_masked) lg = logits(xt, t);
  for (int l = 0; l < L_; ++l) {
    if (xt[l] == kMask) {
      const Vec p = num::softmax(lg.row(l));
      for (int k = 0; k < K_; ++k) out(l, k) = p[k];
    } else {
      out(l, static_cast<std::size_t>(xt[l])) = 1.0;
    }
  }
  return out;
}

void DiscreteDenoiser::backward(const Tokens& xt, int t, const Mat& dlogits, std::span<double> grad,
                                double scale) const {
  num::require_same_size(grad.size(), params().size(), "denoiser backward");
  if (kind_ == DenoiserKind::tabular) {
    const std::size_t off = row_offset(xt, t);
    const auto flat = dlogits.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) grad[off + i] += scale * flat[i];
  } else {
    Vec up(dlogits.flat().size());
    std::copy(dlogits.flat().begin(), dlogits.flat().end(), up.begin());
    net_.backward_into(encode(xt, t), up, grad, scale);
  }
}

// ---------------------------------------------------------------------------
// SUBS reverse kernel

Mat subs_step_probs(const Tokens& xt, const Mat& x0hat, double alpha_bar_s, double alpha_bar_t) {
  const std::size_t L = xt.size();
  const std::size_t K = x0hat.cols();
  if (!(alpha_bar_s > alpha_bar_t)) throw DomainError("SUBS: need s < t");
  const double denom = 1.0 - alpha_bar_t;
  const double stay = (1.0 - alpha_bar_s) / denom;
  const double emit = (alpha_bar_s - alpha_bar_t) / denom;
  Mat out(L, K + 1);
  for (std::size_t l = 0; l < L; ++l) {
    if (xt[l] != kMask) {
      out(l, static_cast<std::size_t>(xt[l])) = 1.0;
      continue;
    }
    out(l, K) = stay;
    for (std::size_t k = 0; k < K; ++k) out(l, k) = emit * x0hat(l, k);
  }
  return out;
}

DiscretePolicy::DiscretePolicy(sched::DiscreteSchedule schedule, DiscreteDenoiser denoiser)
    : schedule_(std::move(schedule)), denoiser_(std::move(denoiser)) {
  if (denoiser_.steps() != schedule_.steps()) throw ConfigError("discrete policy: T mismatch");
}

namespace {
void check_step(int s, int t, int T) {
  if (!(s < t)) throw DomainError("SUBS step: need s < t");
  if (s < 0 || t > T) throw DomainError("SUBS step: timestep out of range");
}
}  // namespace

Mat DiscretePolicy::step_probs(const Tokens& xt, int s, int t) const {
  check_step(s, t, steps());
  return subs_step_probs(xt, denoiser_.probs(xt, t), schedule_.alpha_bar(s), schedule_.alpha_bar(t));
}

Mat DiscretePolicy::step_log_probs(const Tokens& xt, int s, int t) const {
  check_step(s, t, steps());
  const int L = length();
  const int K = vocab();
  const double as = schedule_.alpha_bar(s);
  const double at = schedule_.alpha_bar(t);
  const double denom = 1.0 - at;
  const double log_stay = (1.0 - as) > 0.0 ? std::log((1.0 - as) / denom) : kNegInf;
  const double log_emit = std::log((as - at) / denom);
  Mat out(static_cast<std::size_t>(L), static_cast<std::size_t>(K + 1), kNegInf);
  bool any_masked = false;
  for (int tok : xt) any_masked |= tok == kMask;
  Mat lg;
  if (any_masked) lg = denoiser_.logits(xt, t);
  for (int l = 0; l < L; ++l) {
    if (xt[l] != kMask) {
      out(l, static_cast<std::size_t>(xt[l])) = 0.0;
      continue;
    }
    const Vec lp = num::log_softmax(lg.row(l));
    for (int k = 0; k < K; ++k) out(l, k) = log_emit + lp[k];
    out(l, static_cast<std::size_t>(K)) = log_stay;
  }
  return out;
}

double positions_log_prob(const Mat& log_probs, const Tokens& tokens) {
  const std::size_t K = log_probs.cols() - 1;
  double acc = 0.0;
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const std::size_t col = tokens[l] == kMask ? K : static_cast<std::size_t>(tokens[l]);
    acc += log_probs(l, col);
  }
  return acc;
}

double DiscretePolicy::logprob(const Tokens& xt, const Tokens& xprev, int s, int t) const {
  if (xt.size() != xprev.size()) throw DomainError("logprob: length mismatch");
  for (std::size_t l = 0; l < xt.size(); ++l) {
    if (xt[l] != kMask && xprev[l] != xt[l]) {
      throw UnreachableTransition("unmasked token changed at position " + std::to_string(l));
    }
  }
  const double lp = positions_log_prob(step_log_probs(xt, s, t), xprev);
  if (!std::isfinite(lp)) throw UnreachableTransition("transition has zero probability under SUBS");
  return lp;
}

void DiscretePolicy::logprob_grad(const Tokens& xt, const Tokens& xprev, int s, int t,
                                  std::span<double> grad, double scale) const {
  check_step(s, t, steps());
  const int L = length();
  const int K = vocab();
  bool any = false;
  Mat dlogits(static_cast<std::size_t>(L), static_cast<std::size_t>(K));
  Mat lg;
  for (int l = 0; l < L; ++l) {
    if (xt[l] != kMask || xprev[l] == kMask) continue;
    if (!any) lg = denoiser_.logits(xt, t);
    any = true;
    const Vec p = num::softmax(lg.row(l));
    for (int k = 0; k < K; ++k) dlogits(l, k) = (k == xprev[l] ? 1.0 : 0.0) - p[k];
  }
  if (any) denoiser_.backward(xt, t, dlogits, grad, scale);
}

std::vector<Transition> DiscretePolicy::transitions(const Tokens& xt, int t) const {
  const int s = t - 1;
  const Mat lp = step_log_probs(xt, s, t);
  const int L = length();
  const int K = vocab();
  std::vector<int> masked;
  for (int l = 0; l < L; ++l) {
    if (xt[l] == kMask) masked.push_back(l);
  }
  std::vector<int> options;
  for (int k = 0; k <= K; ++k) options.push_back(k == K ? kMask : k);
  std::vector<Transition> out;
  std::vector<std::size_t> digit(masked.size(), 0);
  while (true) {
    Tokens next = xt;
    double logp = 0.0;
    for (std::size_t i = 0; i < masked.size(); ++i) {
      const int l = masked[i];
      next[l] = options[digit[i]];
      logp += lp(static_cast<std::size_t>(l), digit[i]);
    }
    if (std::isfinite(logp)) out.push_back(Transition{std::move(next), std::exp(logp), logp});
    std::size_t i = 0;
    while (i < digit.size() && ++digit[i] == options.size()) digit[i++] = 0;
    if (i == digit.size()) break;
  }
  return out;
}

SeqState DiscretePolicy::initial_state() const {
  return SeqState{Tokens(static_cast<std::size_t>(length()), kMask), steps()};
}

Tokens sample_positions(const Mat& probs, RngStream& rng) {
  const std::size_t K = probs.cols() - 1;
  Tokens out(probs.rows());
  for (std::size_t l = 0; l < probs.rows(); ++l) {
    const std::size_t k = num::sample_categorical(probs.row(l), rng);
    out[l] = k == K ? kMask : static_cast<int>(k);
  }
  return out;
}

SeqState forward_mask_sample(const SeqState& x0, int t, const sched::DiscreteSchedule& schedule,
                             RngStream& rng) {
  if (t < 0 || t > schedule.steps()) throw DomainError("forward_mask_sample: t out of range");
  for (int tok : x0.tokens) {
    if (tok == kMask) throw DomainError("forward_mask_sample: x0 must be fully unmasked");
  }
  const double keep = schedule.alpha_bar(t);
  SeqState out{x0.tokens, t};
  for (int& tok : out.tokens) {
    if (!(rng.uniform() < keep)) tok = kMask;
  }
  return out;
}

SeqState subs_reverse_step(const DiscretePolicy& policy, const SeqState& xt, int s, int t,
                           RngStream& rng) {
  const Mat p = policy.step_probs(xt.tokens, s, t);
  return SeqState{sample_positions(p, rng), s};
}

double policy_logprob_discrete(const DiscretePolicy& policy, const SeqState& xt,
                               const SeqState& xprev, int s, int t) {
  return policy.logprob(xt.tokens, xprev.tokens, s, t);
}

std::vector<Trajectory<SeqState>> rollout(const DiscretePolicy& policy, const RngStream& rng, int n) {
  if (n < 1) throw DomainError("rollout: n must be >= 1");
  std::vector<Trajectory<SeqState>> out(static_cast<std::size_t>(n));
  const int T = policy.steps();
  for (int b = 0; b < n; ++b) {
    RngStream r = rng.split(static_cast<std::uint64_t>(b));
    auto& tr = out[b];
    tr.snapshot = policy.version;
    tr.states.push_back(policy.initial_state());
    for (int t = T; t >= 1; --t) {
      const SeqState& xt = tr.states.back();
      const Mat lp = policy.step_log_probs(xt.tokens, t - 1, t);
      Mat p(lp.rows(), lp.cols());
      for (std::size_t i = 0; i < lp.flat().size(); ++i) p.flat()[i] = std::exp(lp.flat()[i]);
      SeqState next{sample_positions(p, r), t - 1};
      StepRecord rec;
      rec.t = t;
      rec.log_prior = positions_log_prob(lp, next.tokens);
      rec.log_proposal = rec.log_prior;
      tr.steps.push_back(rec);
      tr.states.push_back(std::move(next));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data and pretraining

void SequenceDistribution::validate(int L, int K) const {
  if (support.empty()) throw ConfigError("sequence distribution: empty support");
  if (weights.size() != support.size()) throw ConfigError("sequence distribution: weights/support mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (static_cast<int>(support[i].size()) != L) throw ConfigError("sequence distribution: wrong length");
    for (int tok : support[i]) {
      if (tok < 0 || tok >= K) throw ConfigError("sequence distribution: token out of range");
    }
    if (!(weights[i] >= 0.0)) throw ConfigError("sequence distribution: negative weight");
    total += weights[i];
  }
  if (!(total > 0.0)) throw ConfigError("sequence distribution: zero total weight");
}

Tokens SequenceDistribution::sample(RngStream& rng) const {
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<double> p(weights.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = weights[i] / total;
  return support[num::sample_categorical(p, rng)];
}

std::vector<Tokens> sample_dataset(const SequenceDistribution& dist, int n, RngStream& rng) {
  std::vector<Tokens> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(dist.sample(rng));
  return out;
}

namespace {

// Accumulates w · Σ_{masked ℓ} -log x̂0_ℓ[x0_ℓ] and its gradient.
double masked_ce(const DiscretePolicy& policy, const Tokens& x0, const Tokens& xt, int t, double w,
                 std::vector<double>* grad) {
  const auto& den = policy.denoiser();
  const Mat lg = den.logits(xt, t);
  const int L = policy.length();
  const int K = policy.vocab();
  Mat dl(static_cast<std::size_t>(L), static_cast<std::size_t>(K));
  double loss = 0.0;
  for (int l = 0; l < L; ++l) {
    if (xt[l] != kMask) continue;
    const Vec lp = num::log_softmax(lg.row(l));
    loss -= lp[static_cast<std::size_t>(x0[l])];
    for (int k = 0; k < K; ++k) dl(l, k) = std::exp(lp[k]) - (k == x0[l] ? 1.0 : 0.0);
  }
  if (grad) den.backward(xt, t, dl, *grad, w);
  return w * loss;
}

double step_weight(const sched::DiscreteSchedule& s, int t) {
  return (s.alpha_bar(t - 1) - s.alpha_bar(t)) / (1.0 - s.alpha_bar(t));
}

// Monte-Carlo MDLM loss with `draws` fixed-seed (t, mask) samples per
// sequence, so before/after comparisons share their noise.
double sampled_mdlm_loss(const DiscretePolicy& policy, const std::vector<Tokens>& data, std::uint64_t seed,
                         int draws) {
  RngStream rng(seed, 0x4e1d07ULL);
  const int T = policy.steps();
  double total = 0.0;
  for (const auto& x0 : data) {
    for (int d = 0; d < draws; ++d) {
      const int t = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(T));
      const SeqState xt = forward_mask_sample(SeqState{x0, 0}, t, policy.schedule(), rng);
      total += masked_ce(policy, x0, xt.tokens, t, T * step_weight(policy.schedule(), t), nullptr);
    }
  }
  return total / (static_cast<double>(data.size()) * draws);
}

}  // namespace

double mdlm_loss(const DiscretePolicy& policy, const std::vector<Tokens>& data, std::vector<double>* grad) {
  if (data.empty()) throw DataError("mdlm_loss: empty dataset");
  if (grad && grad->size() != policy.params().size()) grad->assign(policy.params().size(), 0.0);
  std::map<Tokens, int> counts;
  for (const auto& x : data) ++counts[x];
  const int L = policy.length();
  const int T = policy.steps();
  const double inv_n = 1.0 / static_cast<double>(data.size());
  double total = 0.0;
  for (const auto& [x0, count] : counts) {
    for (int t = 1; t <= T; ++t) {
      const double keep = policy.schedule().alpha_bar(t);
      const double w = step_weight(policy.schedule(), t);
      for (std::uint64_t m = 1; m < (std::uint64_t{1} << L); ++m) {
        Tokens xt = x0;
        double p = 1.0;
        for (int l = 0; l < L; ++l) {
          if (m >> l & 1U) {
            xt[l] = kMask;
            p *= 1.0 - keep;
          } else {
            p *= keep;
          }
        }
        if (p == 0.0) continue;
        total += masked_ce(policy, x0, xt, t, w * p * count * inv_n, grad);
      }
    }
  }
  return total;
}

PretrainReport pretrain_discrete(DiscretePolicy& policy, const std::vector<Tokens>& dataset,
                                 const std::vector<Tokens>& heldout, const PretrainConfig& cfg) {
  if (dataset.empty()) throw DataError("pretrain_discrete: empty dataset");
  if (cfg.epochs < 0) throw ConfigError("pretrain_discrete: epochs must be >= 0");
  for (const auto& x : dataset) {
    if (static_cast<int>(x.size()) != policy.length()) throw DataError("pretrain_discrete: wrong length");
    for (int tok : x) {
      if (tok < 0 || tok >= policy.vocab()) throw DataError("pretrain_discrete: masked or invalid token");
    }
  }
  const auto& eval_set = heldout.empty() ? dataset : heldout;
  PretrainReport rep;
  rep.epochs = cfg.epochs;
  const int L = policy.length();
  std::map<Tokens, int> distinct;
  for (const auto& x : dataset) ++distinct[x];
  const std::size_t work = distinct.size() * static_cast<std::size_t>(policy.steps()) *
                           (L < 40 ? (std::size_t{1} << L) : std::numeric_limits<std::size_t>::max() / 4);
  rep.exact = L < 40 && work <= cfg.exact_budget;
  auto measure = [&](const std::vector<Tokens>& d) {
    return rep.exact ? mdlm_loss(policy, d) : sampled_mdlm_loss(policy, d, cfg.seed, 8);
  };
  rep.train_loss_before = measure(dataset);
  rep.heldout_loss_before = measure(eval_set);

  num::Adam opt(policy.params().size(), num::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  RngStream rng(cfg.seed, 0x9e7a11ULL);
  std::vector<double> grad(policy.params().size());
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * e / cfg.epochs));
    if (rep.exact) {
      std::fill(grad.begin(), grad.end(), 0.0);
      mdlm_loss(policy, dataset, &grad);
      opt.step(policy.params(), grad, lr);
      continue;
    }
    for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(dataset.size(), start + static_cast<std::size_t>(cfg.batch));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const int t = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(policy.steps()));
        SeqState xt = forward_mask_sample(SeqState{dataset[i], 0}, t, policy.schedule(), rng);
        masked_ce(policy, dataset[i], xt.tokens, t,
                  policy.steps() * step_weight(policy.schedule(), t) / static_cast<double>(end - start), &grad);
      }
      opt.step(policy.params(), grad, lr);
    }
  }
  rep.train_loss_after = measure(dataset);
  rep.heldout_loss_after = measure(eval_set);
  return rep;
}

}  // namespace davlab::disc
