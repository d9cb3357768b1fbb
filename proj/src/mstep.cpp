#include "davlab/mstep.hpp"

#include <cmath>
#include <string>

#include "davlab/errors.hpp"
#include "davlab/parallel.hpp"

namespace davlab::mstep {

void MStepConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("M-step: learning rate must be >= 0");
  if (steps < 1) throw ConfigError("M-step: distillation steps must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("M-step: lambda must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("M-step: moment decays must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("M-step: eps must be positive");
}

namespace {

// Trajectories are reduced in fixed-size chunks so the summation order does
// not depend on the number of workers.
constexpr std::size_t kChunk = 8;

const num::Vec& tokens_of(const num::Vec& x) { return x; }
const disc::Tokens& tokens_of(const disc::SeqState& s) { return s.tokens; }

double step_logprob(const cont::ContinuousPolicy& p, const num::Vec& xt, const num::Vec& xprev, int t) {
  return p.logprob(xt, xprev, t);
}
double step_logprob(const disc::DiscretePolicy& p, const disc::Tokens& xt, const disc::Tokens& xprev, int t) {
  try {
    return p.logprob(xt, xprev, t - 1, t);
  } catch (const UnreachableTransition& e) {
    throw DataError(std::string("M-step batch holds an unreachable transition: ") + e.what());
  }
}
void step_logprob_grad(const cont::ContinuousPolicy& p, const num::Vec& xt, const num::Vec& xprev, int t,
                       std::span<double> g, double scale) {
  p.logprob_grad(xt, xprev, t, g, scale);
}
void step_logprob_grad(const disc::DiscretePolicy& p, const disc::Tokens& xt, const disc::Tokens& xprev,
                       int t, std::span<double> g, double scale) {
  p.logprob_grad(xt, xprev, t - 1, t, g, scale);
}

// KL value, accumulating scale · ∇_θ KL into g.
double step_kl_grad(const cont::ContinuousPolicy& p, const cont::ContinuousPolicy& q, const num::Vec& xt,
                    int t, std::span<double> g, double scale) {
  const num::Vec d = p.mean(xt, t) - q.mean(xt, t);
  const double var = p.sigma2(t);
  if (scale != 0.0) p.mean_vjp(xt, t, d * (1.0 / var), g, scale);
  return d.squared_norm() / (2.0 * var);
}

double step_kl_grad(const disc::DiscretePolicy& p, const disc::DiscretePolicy& q, const disc::Tokens& xt,
                    int t, std::span<double> g, double scale) {
  const auto& sch = p.schedule();
  const double c = (sch.alpha_bar(t - 1) - sch.alpha_bar(t)) / (1.0 - sch.alpha_bar(t));
  bool any = false;
  for (int tok : xt) any |= tok == disc::kMask;
  if (!any) return 0.0;
  const num::Mat lp_logits = p.denoiser().logits(xt, t);
  const num::Mat lq_logits = q.denoiser().logits(xt, t);
  const std::size_t K = lp_logits.cols();
  num::Mat dl(lp_logits.rows(), K);
  double total = 0.0;
  for (std::size_t l = 0; l < xt.size(); ++l) {
    if (xt[l] != disc::kMask) continue;
    const num::Vec lp = num::log_softmax(lp_logits.row(l));
    const num::Vec lq = num::log_softmax(lq_logits.row(l));
    double kl = 0.0;
    for (std::size_t k = 0; k < K; ++k) kl += std::exp(lp[k]) * (lp[k] - lq[k]);
    total += c * kl;
    for (std::size_t k = 0; k < K; ++k) dl(l, k) = c * std::exp(lp[k]) * (lp[k] - lq[k] - kl);
  }
  if (scale != 0.0) p.denoiser().backward(xt, t, dl, g, scale);
  return total;
}

template <class Policy, class State>
LossResult batch_loss(const Policy& policy, const Policy* anchor, const std::vector<Trajectory<State>>& batch,
                      const MStepConfig* cfg, const std::vector<double>* weights) {
  if (batch.empty()) throw DataError("M-step: empty batch");
  if (weights && weights->size() != batch.size()) throw DataError("M-step: weights/batch size mismatch");
  const std::size_t n = policy.params().size();
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<double> values(chunks, 0.0);
  std::vector<std::vector<double>> grads(chunks, std::vector<double>(n, 0.0));
  const double uniform = 1.0 / static_cast<double>(batch.size());
  const double lambda = (anchor && cfg) ? cfg->lambda : 0.0;

  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
    for (std::size_t b = c * kChunk; b < end; ++b) {
      const auto& tr = batch[b];
      const double w = weights ? (*weights)[b] : uniform;
      if (w == 0.0) continue;
      if (tr.steps.size() + 1 != tr.states.size()) throw DataError("M-step: malformed trajectory");
      for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        const int t = tr.steps[i].t;
        const auto& xt = tokens_of(tr.states[i]);
        const auto& xprev = tokens_of(tr.states[i + 1]);
        values[c] -= w * step_logprob(policy, xt, xprev, t);
        step_logprob_grad(policy, xt, xprev, t, grads[c], -w);
        if (lambda > 0.0) {
          double kappa = 1.0;
          if (cfg->kl_gamma_weighted) kappa = std::pow(cfg->gamma, policy.steps() - t);
          values[c] += lambda * kappa * w * step_kl_grad(policy, *anchor, xt, t, grads[c], lambda * kappa * w);
        }
      }
    }
  });
  LossResult out;
  out.grad.assign(n, 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    out.value += values[c];
    for (std::size_t i = 0; i < n; ++i) out.grad[i] += grads[c][i];
  }
  return out;
}

template <class Policy, class State>
StepReport update(Policy& policy, const Policy& anchor, const std::vector<Trajectory<State>>& batch,
                  const MStepConfig& cfg, num::Adam& opt, std::optional<std::uint64_t> expected,
                  const std::vector<double>* weights) {
  cfg.validate();
  if (batch.empty()) throw DataError("M-step: empty batch");
  if (expected) {
    for (const auto& tr : batch) {
      if (tr.snapshot != *expected) {
        throw DataError("M-step: trajectory snapshot " + std::to_string(tr.snapshot) +
                        " differs from E-step snapshot " + std::to_string(*expected));
      }
    }
  }
  if (opt.first_moment().size() != policy.params().size()) {
    throw ConfigError("M-step: optimizer state does not match the parameter count");
  }
  StepReport rep;
  rep.steps = cfg.steps;
  for (int s = 0; s < cfg.steps; ++s) {
    LossResult lr = batch_loss(policy, &anchor, batch, &cfg, weights);
    if (!std::isfinite(lr.value) || !num::all_finite(lr.grad)) {
      throw NumericError("M-step: non-finite loss or gradient at distillation step " + std::to_string(s) +
                         " (loss=" + std::to_string(lr.value) + ")");
    }
    rep.losses.push_back(lr.value);
    opt.step(policy.params(), lr.grad, cfg.lr);
  }
  rep.loss_before = rep.losses.front();
  rep.loss_after = batch_loss(policy, &anchor, batch, &cfg, weights).value;
  ++policy.version;
  return rep;
}

}  // namespace

LossResult dav_loss(const cont::ContinuousPolicy& policy, const ContinuousBatch& batch,
                    const std::vector<double>* weights) {
  return batch_loss<cont::ContinuousPolicy, num::Vec>(policy, nullptr, batch, nullptr, weights);
}
LossResult dav_loss(const disc::DiscretePolicy& policy, const DiscreteBatch& batch,
                    const std::vector<double>* weights) {
  return batch_loss<disc::DiscretePolicy, disc::SeqState>(policy, nullptr, batch, nullptr, weights);
}

LossResult dav_kl_loss(const cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor,
                       const ContinuousBatch& batch, const MStepConfig& cfg, const std::vector<double>* weights) {
  return batch_loss(policy, &anchor, batch, &cfg, weights);
}
LossResult dav_kl_loss(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor,
                       const DiscreteBatch& batch, const MStepConfig& cfg, const std::vector<double>* weights) {
  return batch_loss(policy, &anchor, batch, &cfg, weights);
}

double step_kl(const cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor, const num::Vec& xt,
               int t) {
  return step_kl_grad(policy, anchor, xt, t, {}, 0.0);
}
double step_kl(const disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor, const disc::Tokens& xt,
               int t) {
  return step_kl_grad(policy, anchor, xt, t, {}, 0.0);
}

StepReport mstep_update(cont::ContinuousPolicy& policy, const cont::ContinuousPolicy& anchor,
                        const ContinuousBatch& batch, const MStepConfig& cfg, num::Adam& opt,
                        std::optional<std::uint64_t> expected_snapshot, const std::vector<double>* weights) {
  return update(policy, anchor, batch, cfg, opt, expected_snapshot, weights);
}
StepReport mstep_update(disc::DiscretePolicy& policy, const disc::DiscretePolicy& anchor,
                        const DiscreteBatch& batch, const MStepConfig& cfg, num::Adam& opt,
                        std::optional<std::uint64_t> expected_snapshot, const std::vector<double>* weights) {
  return update(policy, anchor, batch, cfg, opt, expected_snapshot, weights);
}

}  // namespace davlab::mstep
