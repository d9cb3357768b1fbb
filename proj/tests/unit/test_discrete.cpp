#include <doctest.h>

#include <cmath>
#include <set>

#include "davlab/discrete.hpp"
#include "davlab/errors.hpp"
#include "test_util.hpp"

using namespace davlab;
using namespace davlab::disc;
using num::RngStream;

namespace {

DiscretePolicy tabular_policy(int L, int K, int T) {
  return DiscretePolicy(sched::make_discrete_schedule(T), DiscreteDenoiser::tabular(L, K, T));
}

DiscretePolicy mlp_policy(int L, int K, int T, std::uint64_t seed) {
  RngStream rng(seed, 3);
  auto den = DiscreteDenoiser::mlp(L, K, T, {6}, num::Activation::tanh, rng);
  for (auto& w : den.params()) w += 0.3 * rng.normal();
  return DiscretePolicy(sched::make_discrete_schedule(T), std::move(den));
}

void randomize(DiscretePolicy& p, std::uint64_t seed) {
  RngStream rng(seed, 5);
  for (auto& w : p.params()) w = rng.normal();
}

Tokens random_state(int L, int K, RngStream& rng) {
  Tokens x(static_cast<std::size_t>(L));
  for (auto& v : x) {
    const int r = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(K + 1));
    v = r == K ? kMask : r;
  }
  return x;
}

}  // namespace

TEST_CASE("state enumeration") {
  CHECK(enumerate_states(1, 2, 1).size() == 3);
  CHECK(enumerate_states(2, 2, 1).size() == 9);
  CHECK(enumerate_states(2, 2, 0).size() == 4);
  CHECK_THROWS_AS(enumerate_states(8, 4, 1), OracleUnavailable);
  CHECK_THROWS_AS(state_space_size(8, 4), OracleUnavailable);
  std::set<std::size_t> seen;
  for (const auto& s : enumerate_states(3, 3, 2)) {
    const auto i = state_index(s.tokens, 3);
    CHECK(state_from_index(i, 3, 3) == s.tokens);
    seen.insert(i);
  }
  CHECK(seen.size() == 64);
}

TEST_CASE("text round trip") {
  const std::string ab = "ACGT";
  const Tokens x{0, kMask, 3, 2};
  CHECK(to_string(x, ab) == "A?TG");
  CHECK(parse_tokens("A?TG", ab) == x);
  CHECK_THROWS_AS(parse_tokens("AXG", ab), ConfigError);
}

TEST_CASE("forward masking") {
  const auto s = sched::make_discrete_schedule(4);
  RngStream rng(1, 1);
  const SeqState x0{{0, 1, 1, 0}, 0};
  CHECK(forward_mask_sample(x0, 0, s, rng).tokens == x0.tokens);
  CHECK(forward_mask_sample(x0, 4, s, rng).masked_count() == 4);
  const int n = 100000;
  int masked = 0;
  for (int i = 0; i < n; ++i) masked += forward_mask_sample(x0, 2, s, rng).tokens[1] == kMask;
  CHECK(std::abs(masked - 0.5 * n) < 3 * std::sqrt(0.25 * n));
  CHECK_THROWS_AS(forward_mask_sample(x0, 5, s, rng), DomainError);
  CHECK_THROWS_AS(forward_mask_sample(SeqState{{0, kMask, 1, 0}, 0}, 2, s, rng), DomainError);
}

TEST_CASE("SUBS hand substitution") {
  // uniform denoiser (zero logits), T=4, t=4 -> s=3
  const auto pol = tabular_policy(1, 3, 4);
  const auto p = pol.step_probs({kMask}, 3, 4);
  CHECK(p(0, 3) == doctest::Approx(0.75).epsilon(1e-15));
  for (int k = 0; k < 3; ++k) CHECK(p(0, k) == doctest::Approx(0.25 / 3).epsilon(1e-14));
  CHECK(pol.logprob({kMask}, {kMask}, 3, 4) == doctest::Approx(std::log(0.75)).epsilon(1e-14));
  // carry-over of an unmasked token
  const auto pol4 = tabular_policy(2, 4, 4);
  RngStream rng(2, 2);
  for (int i = 0; i < 1000; ++i) {
    const auto next = subs_reverse_step(pol4, SeqState{{3, kMask}, 2}, 1, 2, rng);
    CHECK(next.tokens[0] == 3);
  }
  CHECK(pol4.logprob({3, 1}, {3, 1}, 1, 2) == 0.0);
  CHECK_THROWS_AS(pol4.logprob({3, 1}, {2, 1}, 1, 2), UnreachableTransition);
  CHECK_THROWS_AS(pol4.step_probs({kMask, kMask}, 2, 2), DomainError);
}

TEST_CASE("uniform denoiser emits uniformly given unmasking") {
  const auto pol = tabular_policy(1, 4, 4);
  RngStream rng(3, 3);
  std::vector<double> counts(4, 0.0);
  for (int i = 0; i < 40000; ++i) {
    const auto next = subs_reverse_step(pol, SeqState{{kMask}, 2}, 1, 2, rng);
    if (next.tokens[0] != kMask) counts[static_cast<std::size_t>(next.tokens[0])] += 1;
  }
  CHECK(testutil::chi2_pvalue(counts, {0.25, 0.25, 0.25, 0.25}) > 0.01);
}

TEST_CASE("SUBS rows sum to one for every step of a T=5 schedule") {
  auto pol = tabular_policy(3, 2, 5);
  randomize(pol, 1);
  double worst = 0.0;
  for (int t = 1; t <= 5; ++t) {
    for (const auto& x : enumerate_states(3, 2, t)) {
      const auto p = pol.step_probs(x.tokens, t - 1, t);
      for (std::size_t l = 0; l < p.rows(); ++l) {
        double s = 0.0;
        for (double v : p.row(l)) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
      }
      double tot = 0.0;
      for (const auto& tr : pol.transitions(x.tokens, t)) tot += tr.prob;
      worst = std::max(worst, std::abs(tot - 1.0));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("carry-over and mask monotonicity over 1e5 reverse steps") {
  auto pol = mlp_policy(4, 3, 5, 7);
  RngStream rng(4, 4);
  int violations = 0;
  for (int i = 0; i < 100000; ++i) {
    const int t = 1 + static_cast<int>(rng.next_u64() % 5);
    const SeqState xt{random_state(4, 3, rng), t};
    const auto xs = subs_reverse_step(pol, xt, t - 1, t, rng);
    for (int l = 0; l < 4; ++l) {
      if (xt.tokens[l] != kMask && xs.tokens[l] != xt.tokens[l]) ++violations;
    }
    if (xs.masked_count() > xt.masked_count()) ++violations;
    if (t == 1 && xs.masked_count() != 0) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("rollouts start fully masked and end unmasked") {
  auto pol = mlp_policy(3, 2, 4, 1);
  const auto a = rollout(pol, RngStream(5, 0), 50);
  const auto b = rollout(pol, RngStream(5, 0), 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].states.front().masked_count() == 3);
    CHECK(a[i].terminal().masked_count() == 0);
    CHECK(a[i].states == b[i].states);
    double lp = 0.0;
    for (const auto& st : a[i].steps) lp += st.log_prior;
    CHECK(std::isfinite(lp));
  }
  CHECK_THROWS_AS(rollout(pol, RngStream(5, 0), 0), DomainError);
}

TEST_CASE("denoiser and policy gradients match finite differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (bool mlp : {false, true}) {
      DiscretePolicy pol = mlp ? mlp_policy(3, 2, 4, seed) : tabular_policy(3, 2, 4);
      if (!mlp) randomize(pol, seed);
      RngStream rng(seed, 9);
      const int t = 1 + static_cast<int>(rng.next_u64() % 4);
      Tokens xt = random_state(3, 2, rng);
      xt[0] = kMask;
      const auto trs = pol.transitions(xt, t);
      const Tokens& xprev = trs[rng.next_u64() % trs.size()].next;
      std::vector<double> g(pol.params().size(), 0.0);
      pol.logprob_grad(xt, xprev, t - 1, t, g);
      CHECK(testutil::fd_check(pol.params(), [&] { return pol.logprob(xt, xprev, t - 1, t); }, g) < 1e-4);

      Mat up(3, 2);
      for (double& v : up.flat()) v = rng.normal();
      std::vector<double> gd(pol.params().size(), 0.0);
      pol.denoiser().backward(xt, t, up, gd);
      auto f = [&] {
        const Mat lg = pol.denoiser().logits(xt, t);
        double s = 0.0;
        for (std::size_t i = 0; i < lg.flat().size(); ++i) s += lg.flat()[i] * up.flat()[i];
        return s;
      };
      CHECK(testutil::fd_check(pol.params(), f, gd) < 1e-4);
    }
  }
}

TEST_CASE("mdlm loss gradient matches finite differences") {
  auto pol = mlp_policy(2, 2, 3, 4);
  const std::vector<Tokens> data{{0, 1}, {1, 1}, {0, 0}};
  std::vector<double> g;
  mdlm_loss(pol, data, &g);
  CHECK(testutil::fd_check(pol.params(), [&] { return mdlm_loss(pol, data); }, g) < 1e-4);
  CHECK_THROWS_AS(mdlm_loss(pol, {}), DataError);
}

TEST_CASE("pretraining recovers marginals at the all-mask state") {
  SUBCASE("uniform over {00, 11}") {
    auto pol = tabular_policy(2, 2, 3);
    const std::vector<Tokens> data{{0, 0}, {1, 1}};
    const auto rep = pretrain_discrete(pol, data, data, PretrainConfig{});
    for (int t = 1; t <= 3; ++t) {
      const Mat p = pol.denoiser().probs({kMask, kMask}, t);
      for (int l = 0; l < 2; ++l) CHECK(std::abs(p(l, 0) - 0.5) < 1e-3);
    }
    CHECK(rep.exact);
  }
  SUBCASE("skewed distribution") {
    auto pol = tabular_policy(2, 2, 3);
    SequenceDistribution dist{{{0, 1}, {1, 0}, {0, 0}}, {0.6, 0.1, 0.3}};
    std::vector<Tokens> data;
    for (int i = 0; i < 6; ++i) data.push_back({0, 1});
    data.push_back({1, 0});
    for (int i = 0; i < 3; ++i) data.push_back({0, 0});
    const auto rep = pretrain_discrete(pol, data, data, PretrainConfig{});
    const Mat p = pol.denoiser().probs({kMask, kMask}, 3);
    CHECK(std::abs(p(0, 0) - 0.9) < 1e-3);
    CHECK(std::abs(p(1, 1) - 0.6) < 1e-3);
    CHECK(rep.heldout_loss_after < rep.heldout_loss_before);
  }
  SUBCASE("single sequence") {
    auto pol = tabular_policy(2, 2, 3);
    const std::vector<Tokens> data{{1, 0}};
    pretrain_discrete(pol, data, data, PretrainConfig{});
    const Mat p = pol.denoiser().probs({kMask, kMask}, 3);
    CHECK(p(0, 1) >= 0.99);
    CHECK(p(1, 0) >= 0.99);
  }
  SUBCASE("zero epochs and bad input") {
    auto pol = tabular_policy(2, 2, 3);
    randomize(pol, 3);
    const auto before = pol.params();
    PretrainConfig cfg;
    cfg.epochs = 0;
    pretrain_discrete(pol, {{0, 1}}, {}, cfg);
    CHECK(pol.params() == before);
    CHECK_THROWS_AS(pretrain_discrete(pol, {}, {}, cfg), DataError);
    cfg.epochs = -1;
    CHECK_THROWS_AS(pretrain_discrete(pol, {{0, 1}}, {}, cfg), ConfigError);
  }
}

TEST_CASE("sampled pretraining reduces held-out loss for an mlp denoiser") {
  auto pol = mlp_policy(6, 2, 4, 2);
  SequenceDistribution dist{{{0, 1, 0, 1, 0, 1}, {1, 1, 0, 0, 1, 1}}, {0.7, 0.3}};
  RngStream rng(1, 1);
  const auto train = sample_dataset(dist, 200, rng);
  const auto held = sample_dataset(dist, 100, rng);
  PretrainConfig cfg;
  cfg.epochs = 30;
  cfg.exact_budget = 10;
  cfg.lr = 0.01;
  const auto rep = pretrain_discrete(pol, train, held, cfg);
  CHECK_FALSE(rep.exact);
  CHECK(rep.heldout_loss_after < rep.heldout_loss_before);
}
